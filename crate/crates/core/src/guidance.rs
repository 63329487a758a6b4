//! Latent optimization over a simulated trajectory: at each guided timestep the
//! map is rendered, clustered into k Gaussian targets, and the latent takes a
//! gradient step on the clustering loss. Designated timesteps instead refine
//! until the loss drops below a threshold.

use serde::{Deserialize, Serialize};

use crate::attention::AttentionMap;
use crate::blobsim::{self, Latent, SimParams, SimState, TOTAL_STEPS};
use crate::clustering::{build_cluster_set_with, ClusterOptions, ClusterSet, MemberPolicy};
use crate::error::{Error, Result};
use crate::eval::count_components;
use crate::objective::{
    build_targets, clustering_loss_with, loss_gradient_with, KlForm, LossConfig, LossReport,
    LossScaling, DEFAULT_EPSILON,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    /// Target object count.
    pub k: usize,
    pub tau: f64,
    /// Step size per guided timestep (descending t). A single entry applies
    /// to every timestep; refinement steps use the entry of their timestep or
    /// the last entry.
    pub alpha: Vec<f64>,
    pub guided_timesteps: Vec<u32>,
    /// (timestep, loss threshold) pairs where refinement replaces the single
    /// update.
    pub refinement: Vec<(u32, f64)>,
    pub max_refinement_iters: usize,
    pub epsilon: f64,
    pub disable_min_distance: bool,
    pub use_k_scaling: bool,
    pub member_policy: MemberPolicy,
    pub kl_form: KlForm,
    /// Minimum component area used by the counting oracle.
    pub min_area: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            k: 4,
            tau: 0.3,
            alpha: vec![0.5],
            guided_timesteps: (41..=50).rev().collect(),
            refinement: vec![(50, 0.2), (40, 0.15)],
            max_refinement_iters: 25,
            epsilon: DEFAULT_EPSILON,
            disable_min_distance: false,
            use_k_scaling: false,
            member_policy: MemberPolicy::AllPatches,
            kl_form: KlForm::Generalized,
            min_area: 2,
        }
    }
}

impl GuidanceConfig {
    pub fn for_count(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    /// Step sizes used with Stable Diffusion 2.1 latents. Kept for reference;
    /// they are far too large for the blob latent.
    pub fn sd21_scale(k: usize) -> Self {
        Self {
            alpha: vec![40.0],
            ..Self::for_count(k)
        }
    }

    /// Step sizes used with SDXL latents. Reference only, as above.
    pub fn sdxl_scale(k: usize) -> Self {
        Self {
            alpha: vec![75_000.0],
            ..Self::for_count(k)
        }
    }

    pub fn preset(name: &str, k: usize) -> Option<Self> {
        match name {
            "default" | "toy" => Some(Self::for_count(k)),
            "sd21" => Some(Self::sd21_scale(k)),
            "sdxl" => Some(Self::sdxl_scale(k)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidCount(self.k));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidThreshold(self.tau));
        }
        if self.alpha.is_empty() || self.alpha.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(Error::InvalidParameter(
                "alpha entries must be finite and >= 0".into(),
            ));
        }
        if self.alpha.len() > 1 && self.alpha.len() != self.guided_timesteps.len() {
            return Err(Error::InvalidParameter(format!(
                "{} alpha entries for {} guided timesteps",
                self.alpha.len(),
                self.guided_timesteps.len()
            )));
        }
        if self
            .guided_timesteps
            .iter()
            .any(|&t| t == 0 || t > TOTAL_STEPS)
            || self
                .refinement
                .iter()
                .any(|&(t, _)| t == 0 || t > TOTAL_STEPS)
        {
            return Err(Error::InvalidParameter(format!(
                "guided and refinement timesteps must lie in 1..={TOTAL_STEPS}"
            )));
        }
        if self
            .refinement
            .iter()
            .any(|&(_, th)| th.is_nan() || th <= 0.0)
        {
            return Err(Error::InvalidParameter(
                "refinement thresholds must be positive".into(),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-4) {
            return Err(Error::InvalidParameter(format!("epsilon {}", self.epsilon)));
        }
        Ok(())
    }

    pub fn alpha_at(&self, t: u32) -> f64 {
        if self.alpha.len() == 1 {
            return self.alpha[0];
        }
        let mut guided = self.guided_timesteps.clone();
        guided.sort_unstable_by(|a, b| b.cmp(a));
        match guided.iter().position(|&g| g == t) {
            Some(i) => self.alpha[i],
            None => *self.alpha.last().unwrap(),
        }
    }

    pub fn cluster_options(&self) -> ClusterOptions {
        ClusterOptions {
            k: self.k,
            tau: self.tau,
            enforce_min_distance: !self.disable_min_distance,
            member_policy: self.member_policy,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            epsilon: self.epsilon,
            scaling: if self.use_k_scaling {
                LossScaling::K
            } else {
                LossScaling::SqrtK
            },
            form: self.kl_form,
        }
    }

    fn refinement_at(&self, t: u32) -> Option<f64> {
        self.refinement
            .iter()
            .find(|&&(rt, _)| rt == t)
            .map(|&(_, th)| th)
    }
}

/// Loss and latent gradient at one latent, with the clusters they came from.
#[derive(Debug, Clone)]
pub struct GuidanceEval {
    pub map: AttentionMap,
    pub clusters: ClusterSet,
    pub loss: LossReport,
    pub gradient: Vec<f64>,
}

/// Renders the latent, rebuilds clusters and targets, and returns the loss
/// together with its gradient with respect to the latent.
pub fn evaluate(latent: &Latent, cfg: &GuidanceConfig, sim: &SimParams) -> Result<GuidanceEval> {
    let fwd = blobsim::render_forward(latent, sim.size, &sim.smoothing)?;
    let clusters = build_cluster_set_with(&fwd.normalized, &cfg.cluster_options())?;
    let targets = build_targets(&clusters, cfg.tau)?;
    let lcfg = cfg.loss_config();
    let loss = clustering_loss_with(&fwd.normalized, &clusters, &targets, &lcfg)?;
    let g_map = loss_gradient_with(&fwd.normalized, &clusters, &targets, &lcfg)?;
    let gradient = blobsim::render_pullback(latent, &fwd, &sim.smoothing, &g_map)?;
    if !loss.total.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::Diverged("non-finite loss or gradient".into()));
    }
    Ok(GuidanceEval {
        map: fwd.normalized,
        clusters,
        loss,
        gradient,
    })
}

fn step(latent: &Latent, gradient: &[f64], alpha: f64) -> Result<Latent> {
    let next: Vec<f64> = latent
        .to_vec()
        .iter()
        .zip(gradient)
        .map(|(z, g)| z - alpha * g)
        .collect();
    let next = Latent::from_slice(&next);
    if !next.is_finite() {
        return Err(Error::Diverged("latent left the finite range".into()));
    }
    Ok(next)
}

#[derive(Debug, Clone)]
pub struct UpdateOutcome {
    pub latent: Latent,
    /// Loss at the input latent.
    pub loss: LossReport,
    pub clusters: ClusterSet,
    pub gradient: Vec<f64>,
}

/// One step `z <- z - alpha * dL/dz`.
pub fn guidance_update(
    latent: &Latent,
    cfg: &GuidanceConfig,
    sim: &SimParams,
    alpha: f64,
) -> Result<UpdateOutcome> {
    let ev = evaluate(latent, cfg, sim)?;
    let next = step(latent, &ev.gradient, alpha)?;
    Ok(UpdateOutcome {
        latent: next,
        loss: ev.loss,
        clusters: ev.clusters,
        gradient: ev.gradient,
    })
}

#[derive(Debug, Clone)]
pub struct RefinementOutcome {
    pub latent: Latent,
    pub iterations: usize,
    /// Loss of the returned latent.
    pub final_loss: LossReport,
    /// Loss of the input latent.
    pub initial_loss: LossReport,
    /// Every cluster set built, in order.
    pub clusters: Vec<ClusterSet>,
}

/// Repeats [`guidance_update`] until the loss falls below `threshold` or
/// `cfg.max_refinement_iters` updates have been applied.
pub fn iterative_refinement(
    latent: &Latent,
    cfg: &GuidanceConfig,
    sim: &SimParams,
    alpha: f64,
    threshold: f64,
) -> Result<RefinementOutcome> {
    let mut current = latent.clone();
    let mut iterations = 0;
    let mut clusters = Vec::new();
    let mut initial_loss = None;
    loop {
        let ev = evaluate(&current, cfg, sim)?;
        clusters.push(ev.clusters);
        if initial_loss.is_none() {
            initial_loss = Some(ev.loss.clone());
        }
        if ev.loss.total < threshold || iterations >= cfg.max_refinement_iters {
            return Ok(RefinementOutcome {
                latent: current,
                iterations,
                final_loss: ev.loss,
                initial_loss: initial_loss.unwrap(),
                clusters,
            });
        }
        current = step(&current, &ev.gradient, alpha)?;
        iterations += 1;
    }
}

/// One trajectory record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: u32,
    /// Loss of the latent entering this timestep, when guidance ran.
    pub loss: Option<f64>,
    pub relaxations: u32,
    /// Hash of the latent entering this timestep.
    pub latent_hash: String,
}

/// Summary of one cluster set built during a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterAudit {
    pub t: u32,
    pub relaxation_events: u32,
    pub min_pairwise_distance: f64,
    pub enforced_distance: f64,
}

impl ClusterAudit {
    fn of(t: u32, cs: &ClusterSet) -> Self {
        Self {
            t,
            relaxation_events: cs.relaxation_events,
            min_pairwise_distance: cs.min_pairwise_distance(),
            enforced_distance: cs.min_distance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub target_count: usize,
    pub counted: usize,
    pub guided: bool,
    pub map_size: usize,
    /// Last loss evaluated during guidance.
    pub loss_final: Option<f64>,
    pub relaxations_total: u32,
    pub refine_iters_t50: Option<usize>,
    pub refine_iters_t40: Option<usize>,
    pub trajectory: Vec<TrajectoryRecord>,
    #[serde(skip)]
    pub cluster_audit: Vec<ClusterAudit>,
    #[serde(skip)]
    pub final_map: Option<AttentionMap>,
    #[serde(skip)]
    pub initial_latent: Option<Latent>,
}

impl RunResult {
    pub fn final_map(&self) -> &AttentionMap {
        self.final_map
            .as_ref()
            .expect("run result carries its final map")
    }

    pub fn trajectory_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.trajectory {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Runs the trajectory with guidance at the configured timesteps.
pub fn run_guided(seed: u64, cfg: &GuidanceConfig, sim: &SimParams) -> Result<RunResult> {
    run(seed, cfg, sim, true)
}

/// Same trajectory with no guidance updates.
pub fn run_baseline(seed: u64, cfg: &GuidanceConfig, sim: &SimParams) -> Result<RunResult> {
    run(seed, cfg, sim, false)
}

fn run(seed: u64, cfg: &GuidanceConfig, sim: &SimParams, guided: bool) -> Result<RunResult> {
    cfg.validate()?;
    sim.validate()?;
    let mut state = SimState::from_seed(seed, sim);
    let initial_latent = state.latent.clone();
    let mut trajectory = Vec::with_capacity(TOTAL_STEPS as usize + 1);
    let mut audit = Vec::new();
    let mut loss_final = None;
    let mut relaxations_total = 0;
    let mut refine_iters_t50 = None;
    let mut refine_iters_t40 = None;

    while state.timestep > 0 {
        let t = state.timestep;
        let hash = state.latent.hash_hex();
        let mut loss = None;
        let mut relaxations = 0;
        if guided {
            let alpha = cfg.alpha_at(t);
            if let Some(threshold) = cfg.refinement_at(t) {
                let out = iterative_refinement(&state.latent, cfg, sim, alpha, threshold)
                    .map_err(|e| e.at(t))?;
                for cs in &out.clusters {
                    relaxations += cs.relaxation_events;
                    audit.push(ClusterAudit::of(t, cs));
                }
                loss = Some(out.initial_loss.total);
                loss_final = Some(out.final_loss.total);
                match t {
                    50 => refine_iters_t50 = Some(out.iterations),
                    40 => refine_iters_t40 = Some(out.iterations),
                    _ => {}
                }
                state.latent = out.latent;
            } else if cfg.guided_timesteps.contains(&t) {
                let out = guidance_update(&state.latent, cfg, sim, alpha).map_err(|e| e.at(t))?;
                relaxations += out.clusters.relaxation_events;
                audit.push(ClusterAudit::of(t, &out.clusters));
                loss = Some(out.loss.total);
                loss_final = Some(out.loss.total);
                state.latent = out.latent;
            }
        }
        relaxations_total += relaxations;
        trajectory.push(TrajectoryRecord {
            t,
            loss,
            relaxations,
            latent_hash: hash,
        });
        state = blobsim::simulate_step(&state).map_err(|e| e.at(t))?;
    }
    trajectory.push(TrajectoryRecord {
        t: 0,
        loss: None,
        relaxations: 0,
        latent_hash: state.latent.hash_hex(),
    });

    let fwd =
        blobsim::render_forward(&state.latent, sim.size, &sim.smoothing).map_err(|e| e.at(0))?;
    let counted = count_components(&fwd.normalized, cfg.tau, cfg.min_area);
    Ok(RunResult {
        seed,
        target_count: cfg.k,
        counted,
        guided,
        map_size: sim.size,
        loss_final,
        relaxations_total,
        refine_iters_t50,
        refine_iters_t40,
        trajectory,
        cluster_audit: audit,
        final_map: Some(fwd.normalized),
        initial_latent: Some(initial_latent),
    })
}

/// Replays a run's trajectory and returns the normalized map of the latent
/// entering each requested timestep (t = 0 is the final map).
pub fn replay_maps(
    seed: u64,
    cfg: &GuidanceConfig,
    sim: &SimParams,
    guided: bool,
    timesteps: &[u32],
) -> Result<Vec<(u32, AttentionMap)>> {
    if let Some(&bad) = timesteps.iter().find(|&&t| t > TOTAL_STEPS) {
        return Err(Error::InvalidParameter(format!(
            "timestep {bad} outside 0..={TOTAL_STEPS}"
        )));
    }
    let mut latents: Vec<Option<Latent>> = vec![None; TOTAL_STEPS as usize + 1];
    let mut state = SimState::from_seed(seed, sim);
    cfg.validate()?;
    loop {
        let t = state.timestep;
        latents[t as usize] = Some(state.latent.clone());
        if t == 0 {
            break;
        }
        if guided {
            let alpha = cfg.alpha_at(t);
            if let Some(th) = cfg.refinement_at(t) {
                state.latent = iterative_refinement(&state.latent, cfg, sim, alpha, th)?.latent;
            } else if cfg.guided_timesteps.contains(&t) {
                state.latent = guidance_update(&state.latent, cfg, sim, alpha)?.latent;
            }
        }
        state = blobsim::simulate_step(&state)?;
    }
    timesteps
        .iter()
        .map(|&t| {
            let latent = latents[t as usize].as_ref().unwrap();
            let fwd = blobsim::render_forward(latent, sim.size, &sim.smoothing)?;
            Ok((t, fwd.normalized))
        })
        .collect()
}
