//! Greedy cluster-center selection under a minimum pairwise distance,
//! nearest-center assignment of patches, and per-cluster radii.

use serde::{Deserialize, Serialize};

use crate::attention::AttentionMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchCoord {
    pub row: usize,
    pub col: usize,
}

impl PatchCoord {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn from_index(index: usize, side: usize) -> Self {
        Self {
            row: index / side,
            col: index % side,
        }
    }

    pub fn index(&self, side: usize) -> usize {
        self.row * side + self.col
    }

    /// Squared Euclidean distance in patch units; exact for any map size we handle.
    pub fn dist2(&self, other: &PatchCoord) -> u64 {
        let dr = self.row.abs_diff(other.row) as u64;
        let dc = self.col.abs_diff(other.col) as u64;
        dr * dr + dc * dc
    }

    pub fn distance(&self, other: &PatchCoord) -> f64 {
        (self.dist2(other) as f64).sqrt()
    }
}

/// Minimum center separation d = H / k.
pub fn min_center_distance(side: usize, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidCount(k));
    }
    if k > side * side {
        return Err(Error::MapTooSmall {
            k,
            patches: side * side,
        });
    }
    Ok(side as f64 / k as f64)
}

/// Patch indices sorted by descending score; equal scores keep ascending
/// row-major order.
pub fn descending_order(map: &AttentionMap) -> Vec<usize> {
    // Integer keys that order like the scores. Adding 0.0 folds -0.0 into 0.0
    // so the two tie.
    let mut keyed: Vec<(u64, usize)> = map
        .scores()
        .iter()
        .enumerate()
        .map(|(i, &v)| (!descending_key(v + 0.0), i))
        .collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, i)| i).collect()
}

fn descending_key(v: f64) -> u64 {
    let bits = v.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

fn greedy_scan(
    order: &[usize],
    scores: &[f64],
    floor: Option<f64>,
    side: usize,
    k: usize,
    d: f64,
) -> Vec<PatchCoord> {
    let mut chosen: Vec<PatchCoord> = Vec::with_capacity(k);
    for &idx in order {
        if floor.is_some_and(|tau| scores[idx] < tau) {
            // Scores only decrease from here on.
            break;
        }
        let p = PatchCoord::from_index(idx, side);
        if chosen.iter().all(|c| c.distance(&p) >= d) {
            chosen.push(p);
            if chosen.len() == k {
                break;
            }
        }
    }
    chosen
}

/// Outcome of center selection, including how far the constraints had to be
/// relaxed to find `k` centers.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterSelection {
    pub centers: Vec<PatchCoord>,
    /// The separation actually enforced by the pass that succeeded.
    pub effective_distance: f64,
    pub relaxation_events: u32,
}

/// Greedy center selection. Patches at or above `tau` are scanned in
/// descending score order; a patch becomes a center when it is at least `d`
/// away from every center chosen so far.
///
/// When fewer than `k` centers are found the threshold is dropped and the scan
/// repeated; if that still fails, `d` is halved until the scan succeeds. Each
/// relaxation increments `relaxation_events`.
pub fn select_cluster_centers(
    map: &AttentionMap,
    k: usize,
    d: f64,
    tau: f64,
) -> Result<CenterSelection> {
    select_centers_in_order(map, &descending_order(map), k, d, tau)
}

/// [`select_cluster_centers`] with the scan order supplied, for callers that
/// select several `k` on one map. `order` must be [`descending_order`] of
/// `map`.
pub fn select_centers_in_order(
    map: &AttentionMap,
    order: &[usize],
    k: usize,
    d: f64,
    tau: f64,
) -> Result<CenterSelection> {
    if k == 0 {
        return Err(Error::InvalidCount(k));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidThreshold(tau));
    }
    if !(d >= 0.0 && d.is_finite()) {
        return Err(Error::InvalidParameter(format!("min distance {d}")));
    }
    let side = map.side();
    if k > map.len() {
        return Err(Error::MapTooSmall {
            k,
            patches: map.len(),
        });
    }
    if order.len() != map.len() {
        return Err(Error::InvalidParameter(
            "scan order does not cover the map".into(),
        ));
    }
    let scores = map.scores();

    let centers = greedy_scan(order, scores, Some(tau), side, k, d);
    if centers.len() == k {
        return Ok(CenterSelection {
            centers,
            effective_distance: d,
            relaxation_events: 0,
        });
    }

    let mut events = 1;
    let mut d = d;
    let mut centers = greedy_scan(order, scores, None, side, k, d);
    while centers.len() < k {
        // Distinct patches are at least one apart, so d <= 1 always succeeds.
        if d <= 1.0 {
            return Err(Error::MapTooSmall {
                k,
                patches: map.len(),
            });
        }
        d /= 2.0;
        events += 1;
        centers = greedy_scan(order, scores, None, side, k, d);
    }
    Ok(CenterSelection {
        centers,
        effective_distance: d,
        relaxation_events: events,
    })
}

/// Labels every patch with the index of its nearest center; ties go to the
/// smaller center index.
pub fn assign_patches(map: &AttentionMap, centers: &[PatchCoord]) -> Vec<usize> {
    assert!(
        !centers.is_empty(),
        "assign_patches needs at least one center"
    );
    let side = map.side();
    (0..map.len())
        .map(|i| {
            let p = PatchCoord::from_index(i, side);
            let mut best = 0;
            let mut best_d = p.dist2(&centers[0]);
            for (j, c) in centers.iter().enumerate().skip(1) {
                let dj = p.dist2(c);
                if dj < best_d {
                    best = j;
                    best_d = dj;
                }
            }
            best
        })
        .collect()
}

/// Distance from `center` to the farthest patch of cluster `cluster_index`
/// scoring at least `tau`. Falls back to `d / 2` when only the center (or
/// nothing) is activated.
pub fn cluster_radius(
    map: &AttentionMap,
    labels: &[usize],
    center: PatchCoord,
    cluster_index: usize,
    tau: f64,
    d: f64,
) -> f64 {
    let side = map.side();
    let far = labels
        .iter()
        .zip(map.scores())
        .enumerate()
        .filter(|(_, (&l, &s))| l == cluster_index && s >= tau)
        .map(|(i, _)| PatchCoord::from_index(i, side).dist2(&center))
        .max()
        .unwrap_or(0);
    if far == 0 {
        d / 2.0
    } else {
        (far as f64).sqrt()
    }
}

/// Which patches of a cluster enter the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemberPolicy {
    /// Every patch of the cluster's nearest-center cell.
    #[default]
    AllPatches,
    /// Only cell patches at or above the threshold, plus the center itself.
    ActivatedOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterOptions {
    pub k: usize,
    pub tau: f64,
    pub enforce_min_distance: bool,
    pub member_policy: MemberPolicy,
}

impl ClusterOptions {
    pub fn new(k: usize, tau: f64) -> Self {
        Self {
            k,
            tau,
            enforce_min_distance: true,
            member_policy: MemberPolicy::AllPatches,
        }
    }
}

/// k clusters over an attention map.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    pub side: usize,
    pub centers: Vec<PatchCoord>,
    pub assignment: Vec<usize>,
    pub radii: Vec<f64>,
    /// Separation enforced when the centers were selected.
    pub min_distance: f64,
    pub relaxation_events: u32,
    members: Vec<Vec<usize>>,
}

impl ClusterSet {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    /// Patch indices summed over for cluster `i` in the loss.
    pub fn members(&self, i: usize) -> &[usize] {
        &self.members[i]
    }

    /// Smallest pairwise center distance (infinite for k = 1).
    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.centers.iter().enumerate() {
            for b in &self.centers[i + 1..] {
                best = best.min(a.distance(b));
            }
        }
        best
    }

    /// Assembles a cluster set from explicit parts. Members are the full cells.
    pub fn from_parts(
        map: &AttentionMap,
        centers: Vec<PatchCoord>,
        radii: Vec<f64>,
        min_distance: f64,
    ) -> Result<Self> {
        if centers.is_empty() || radii.len() != centers.len() {
            return Err(Error::InvalidParameter(
                "centers and radii must align".into(),
            ));
        }
        let assignment = assign_patches(map, &centers);
        let members = cell_members(&assignment, centers.len());
        Ok(Self {
            side: map.side(),
            centers,
            assignment,
            radii,
            min_distance,
            relaxation_events: 0,
            members,
        })
    }

    pub fn dump(&self) -> ClusterSetDump {
        ClusterSetDump {
            k: self.k(),
            centers: self.centers.clone(),
            radii: self.radii.clone(),
            d: self.min_distance,
            relaxation_events: self.relaxation_events,
        }
    }

    /// Label grid as CSV, one map row per line.
    pub fn labels_csv(&self) -> String {
        let mut out = String::new();
        for row in self.assignment.chunks(self.side) {
            let line: Vec<String> = row.iter().map(|l| l.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

fn cell_members(assignment: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); k];
    for (i, &l) in assignment.iter().enumerate() {
        members[l].push(i);
    }
    members
}

/// JSON debug view of a [`ClusterSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSetDump {
    pub k: usize,
    pub centers: Vec<PatchCoord>,
    pub radii: Vec<f64>,
    pub d: f64,
    pub relaxation_events: u32,
}

/// Selects centers with d = H/k, assigns every patch, and computes radii.
pub fn build_cluster_set(map: &AttentionMap, k: usize, tau: f64) -> Result<ClusterSet> {
    build_cluster_set_with(map, &ClusterOptions::new(k, tau))
}

pub fn build_cluster_set_with(map: &AttentionMap, opts: &ClusterOptions) -> Result<ClusterSet> {
    let nominal = min_center_distance(map.side(), opts.k)?;
    let d = if opts.enforce_min_distance {
        nominal
    } else {
        0.0
    };
    let selection = select_cluster_centers(map, opts.k, d, opts.tau)?;
    let assignment = assign_patches(map, &selection.centers);
    // With the constraint disabled there is no separation to derive a
    // fallback radius from, so the nominal H/k is used.
    let fallback_d = if selection.effective_distance > 0.0 {
        selection.effective_distance
    } else {
        nominal
    };
    let radii = selection
        .centers
        .iter()
        .enumerate()
        .map(|(i, &c)| cluster_radius(map, &assignment, c, i, opts.tau, fallback_d))
        .collect();
    let mut members = cell_members(&assignment, opts.k);
    if opts.member_policy == MemberPolicy::ActivatedOnly {
        let scores = map.scores();
        for (i, cell) in members.iter_mut().enumerate() {
            let center = selection.centers[i].index(map.side());
            cell.retain(|&p| p == center || scores[p] >= opts.tau);
        }
    }
    Ok(ClusterSet {
        side: map.side(),
        centers: selection.centers,
        assignment,
        radii,
        min_distance: selection.effective_distance,
        relaxation_events: selection.relaxation_events,
        members,
    })
}
