//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use countcluster::attention::AttentionMap;
use countcluster::blobsim::{render_forward, sample_latent, Latent, SimParams};
use countcluster::clustering::{build_cluster_set_with, ClusterOptions, ClusterSet};
use countcluster::guidance::{evaluate, GuidanceConfig};
use countcluster::objective::{build_targets, clustering_loss_with, TargetDistribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Patch coordinates as (row, col).
pub type Coords = Vec<(usize, usize)>;

/// Greedy pass written line by line from the pseudocode: visit
/// patches by descending score, accept a patch when every accepted center is
/// at least `d` away, stop at `k`.
pub fn greedy_pseudocode(sorted: &[(usize, usize)], k: usize, d: f64) -> Vec<(usize, usize)> {
    let mut c: Vec<(usize, usize)> = Vec::with_capacity(k);
    for &(x, y) in sorted {
        let far_enough = c.iter().all(|&(cx, cy)| {
            let dx = x as f64 - cx as f64;
            let dy = y as f64 - cy as f64;
            (dx * dx + dy * dy).sqrt() >= d
        });
        if far_enough {
            c.push((x, y));
        }
        if c.len() == k {
            break;
        }
    }
    c
}

/// Patch coordinates by descending score, equal scores in ascending index
/// order: all patches, and those at or above `tau`.
pub fn argsort_descending(scores: &[f64], side: usize, tau: f64) -> (Coords, Coords) {
    // A stable sort keeps equal scores in ascending index order.
    let mut sorted: Vec<usize> = (0..scores.len()).collect();
    sorted.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let all: Vec<(usize, usize)> = sorted.iter().map(|&i| (i / side, i % side)).collect();
    let above = sorted
        .iter()
        .filter(|&&i| scores[i] >= tau)
        .map(|&i| (i / side, i % side))
        .collect();
    (all, above)
}

/// Center selection with the relaxation ladder: threshold first, then no
/// threshold, then halving d. Returns centers and the number of relaxations.
pub fn reference_from_sorted(
    all: &[(usize, usize)],
    above: &[(usize, usize)],
    side: usize,
    k: usize,
) -> (Vec<(usize, usize)>, u32) {
    let mut d = side as f64 / k as f64;
    let c = greedy_pseudocode(above, k, d);
    if c.len() == k {
        return (c, 0);
    }
    let mut events = 1;
    let mut c = greedy_pseudocode(all, k, d);
    while c.len() < k {
        d /= 2.0;
        events += 1;
        c = greedy_pseudocode(all, k, d);
    }
    (c, events)
}

pub fn reference_centers(
    scores: &[f64],
    side: usize,
    k: usize,
    tau: f64,
) -> (Vec<(usize, usize)>, u32) {
    let (all, above) = argsort_descending(scores, side, tau);
    reference_from_sorted(&all, &above, side, k)
}

/// Connected components by recursive depth-first search over 8 neighbours.
pub fn flood_fill_count(on: &[bool], side: usize, min_area: usize) -> usize {
    fn visit(on: &[bool], seen: &mut [bool], side: usize, r: i64, c: i64) -> usize {
        if r < 0 || c < 0 || r >= side as i64 || c >= side as i64 {
            return 0;
        }
        let i = r as usize * side + c as usize;
        if !on[i] || seen[i] {
            return 0;
        }
        seen[i] = true;
        let mut area = 1;
        for dr in -1..=1 {
            for dc in -1..=1 {
                area += visit(on, seen, side, r + dr, c + dc);
            }
        }
        area
    }
    let mut seen = vec![false; on.len()];
    let mut count = 0;
    for i in 0..on.len() {
        if on[i]
            && !seen[i]
            && visit(on, &mut seen, side, (i / side) as i64, (i % side) as i64) >= min_area
        {
            count += 1;
        }
    }
    count
}

pub fn binary_map(on: &[bool], side: usize) -> AttentionMap {
    AttentionMap::new(
        side,
        side,
        on.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    )
    .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Loss at `latent` with the cluster structure frozen.
pub fn frozen_loss(
    latent: &Latent,
    sim: &SimParams,
    cfg: &GuidanceConfig,
    clusters: &ClusterSet,
    targets: &[TargetDistribution],
) -> f64 {
    let fwd = render_forward(latent, sim.size, &sim.smoothing).unwrap();
    clustering_loss_with(&fwd.normalized, clusters, targets, &cfg.loss_config())
        .unwrap()
        .total
}

/// Outcome of one finite-difference comparison.
pub struct GradientCheck {
    pub worst_relative: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Compares the analytical latent gradient with central differences of step
/// `h`. Coordinates whose width sits within `10 h` of a clamp are skipped, as
/// are instances whose perturbations move the min/max patch.
pub fn latent_gradient_check(
    seed: u64,
    sim: &SimParams,
    cfg: &GuidanceConfig,
    h: f64,
) -> Option<GradientCheck> {
    let latent = sample_latent(&mut rng(seed), sim);
    let eval = evaluate(&latent, cfg, sim).ok()?;
    let targets = build_targets(&eval.clusters, cfg.tau).unwrap();
    let base = render_forward(&latent, sim.size, &sim.smoothing).unwrap();
    let x = latent.to_vec();
    let scale = eval.gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut skipped = 0;
    for i in 0..x.len() {
        if i % 4 == 3 {
            let w = x[i].exp();
            let near = |edge: f64| (w - edge).abs() <= 10.0 * h * edge.max(1.0);
            if near(0.5) || near(sim.size as f64) {
                skipped += 1;
                continue;
            }
        }
        let mut plus = x.clone();
        plus[i] += h;
        let mut minus = x.clone();
        minus[i] -= h;
        let lp = Latent::from_slice(&plus);
        let lm = Latent::from_slice(&minus);
        let fp = render_forward(&lp, sim.size, &sim.smoothing).unwrap();
        let fm = render_forward(&lm, sim.size, &sim.smoothing).unwrap();
        if fp.record.argmin_index != base.record.argmin_index
            || fp.record.argmax_index != base.record.argmax_index
            || fm.record.argmin_index != base.record.argmin_index
            || fm.record.argmax_index != base.record.argmax_index
        {
            skipped += 1;
            continue;
        }
        let fd = (frozen_loss(&lp, sim, cfg, &eval.clusters, &targets)
            - frozen_loss(&lm, sim, cfg, &eval.clusters, &targets))
            / (2.0 * h);
        let an = eval.gradient[i];
        let denom = an.abs().max(fd.abs()).max(1e-9 * scale);
        worst = worst.max((an - fd).abs() / denom);
        checked += 1;
    }
    Some(GradientCheck {
        worst_relative: worst,
        checked,
        skipped,
    })
}

/// Clusters and targets for a normalized map with default options.
pub fn clusters_for(
    map: &AttentionMap,
    k: usize,
    tau: f64,
) -> (ClusterSet, Vec<TargetDistribution>) {
    let cs = build_cluster_set_with(map, &ClusterOptions::new(k, tau)).unwrap();
    let t = build_targets(&cs, tau).unwrap();
    (cs, t)
}
