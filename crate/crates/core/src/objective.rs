//! Gaussian cluster targets and the KL clustering loss with its gradient with
//! respect to the normalized attention map.
//!
//! The loss is evaluated on min-max normalized scores without renormalizing
//! either side to a probability distribution, so it is a generalized KL and can
//! go negative when the map exceeds the target over a cluster. A
//! simplex-normalized form is available through [`KlForm::Simplex`].
//!
//! Cluster construction (centers, assignment, radii, targets) is treated as
//! constant when differentiating.

use serde::{Deserialize, Serialize};

use crate::attention::AttentionMap;
use crate::clustering::{ClusterSet, PatchCoord};
use crate::error::{Error, Result};

/// Default lower clamp applied to attention values inside the logarithm.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Width of the Gaussian that equals 1 at its center and `tau` at distance `r`.
pub fn sigma_from_radius(r: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidThreshold(tau));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "radius must be positive, got {r}"
        )));
    }
    Ok((r * r / (-2.0 * tau.ln())).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution {
    pub center: PatchCoord,
    pub sigma: f64,
    side: usize,
    values: Vec<f64>,
}

impl TargetDistribution {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.side + col]
    }
}

/// Evaluates `exp(-|x - center|^2 / (2 sigma^2))` on every patch of a
/// `side`×`side` grid.
pub fn build_target(center: PatchCoord, sigma: f64, side: usize) -> Result<TargetDistribution> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if center.row >= side || center.col >= side {
        return Err(Error::InvalidParameter(format!(
            "center ({}, {}) outside {side}x{side} grid",
            center.row, center.col
        )));
    }
    let two_var = 2.0 * sigma * sigma;
    let values = (0..side * side)
        .map(|i| {
            let d2 = PatchCoord::from_index(i, side).dist2(&center) as f64;
            (-d2 / two_var).exp()
        })
        .collect();
    Ok(TargetDistribution {
        center,
        sigma,
        side,
        values,
    })
}

/// One target per cluster, sized from the cluster radius.
pub fn build_targets(clusters: &ClusterSet, tau: f64) -> Result<Vec<TargetDistribution>> {
    clusters
        .centers
        .iter()
        .zip(&clusters.radii)
        .map(|(&c, &r)| build_target(c, sigma_from_radius(r, tau)?, clusters.side))
        .collect()
}

fn check_epsilon(eps: f64) -> Result<()> {
    if eps > 0.0 && eps <= 1e-4 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "epsilon must lie in (0, 1e-4], got {eps}"
        )))
    }
}

/// `sum P(x) ln(P(x) / max(Q(x), eps))` over `members`.
pub fn kl_divergence_cluster(p: &[f64], q: &[f64], members: &[usize], epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    if members.is_empty() {
        return Err(Error::EmptyCluster(0));
    }
    Ok(members
        .iter()
        .map(|&x| {
            let px = p[x];
            px * (px / q[x].max(epsilon)).ln()
        })
        .sum())
}

fn kl_simplex(p: &[f64], q: &[f64], members: &[usize], epsilon: f64) -> f64 {
    let p_sum: f64 = members.iter().map(|&x| p[x]).sum();
    let q_sum: f64 = members.iter().map(|&x| q[x].max(epsilon)).sum();
    members
        .iter()
        .map(|&x| {
            let ph = p[x] / p_sum;
            let qh = q[x].max(epsilon) / q_sum;
            ph * (ph / qh).ln()
        })
        .sum()
}

/// How the per-cluster divergences are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossScaling {
    /// Divide the sum by sqrt(k).
    #[default]
    SqrtK,
    /// Divide the sum by k.
    K,
}

impl LossScaling {
    pub fn factor(self, k: usize) -> f64 {
        match self {
            LossScaling::SqrtK => 1.0 / (k as f64).sqrt(),
            LossScaling::K => 1.0 / k as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlForm {
    /// Divergence applied directly to the normalized scores.
    #[default]
    Generalized,
    /// Both sides renormalized to sum 1 over each cluster first.
    Simplex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub epsilon: f64,
    pub scaling: LossScaling,
    pub form: KlForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            scaling: LossScaling::SqrtK,
            form: KlForm::Generalized,
        }
    }
}

impl LossConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub per_cluster_kl: Vec<f64>,
    pub total: f64,
    pub k: usize,
    pub epsilon: f64,
}

fn check_alignment(
    map: &AttentionMap,
    clusters: &ClusterSet,
    targets: &[TargetDistribution],
) -> Result<()> {
    if targets.len() != clusters.k() {
        return Err(Error::InvalidParameter(format!(
            "{} targets for {} clusters",
            targets.len(),
            clusters.k()
        )));
    }
    if clusters.side != map.side() || targets.iter().any(|t| t.side != map.side()) {
        return Err(Error::InvalidParameter(
            "map, clusters and targets differ in size".into(),
        ));
    }
    Ok(())
}

/// Clustering loss with the default configuration (sqrt(k) scaling,
/// generalized KL).
pub fn clustering_loss(
    map: &AttentionMap,
    clusters: &ClusterSet,
    targets: &[TargetDistribution],
    epsilon: f64,
) -> Result<LossReport> {
    clustering_loss_with(map, clusters, targets, &LossConfig::with_epsilon(epsilon))
}

pub fn clustering_loss_with(
    map: &AttentionMap,
    clusters: &ClusterSet,
    targets: &[TargetDistribution],
    cfg: &LossConfig,
) -> Result<LossReport> {
    check_epsilon(cfg.epsilon)?;
    check_alignment(map, clusters, targets)?;
    let q = map.scores();
    let per_cluster_kl = targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let members = clusters.members(i);
            if members.is_empty() {
                return Err(Error::EmptyCluster(i));
            }
            Ok(match cfg.form {
                KlForm::Generalized => kl_divergence_cluster(&t.values, q, members, cfg.epsilon)?,
                KlForm::Simplex => kl_simplex(&t.values, q, members, cfg.epsilon),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let k = clusters.k();
    let total = cfg.scaling.factor(k) * per_cluster_kl.iter().sum::<f64>();
    Ok(LossReport {
        per_cluster_kl,
        total,
        k,
        epsilon: cfg.epsilon,
    })
}

/// dL/dQ for the default configuration.
pub fn loss_gradient_wrt_map(
    map: &AttentionMap,
    clusters: &ClusterSet,
    targets: &[TargetDistribution],
    epsilon: f64,
) -> Result<Vec<f64>> {
    loss_gradient_with(map, clusters, targets, &LossConfig::with_epsilon(epsilon))
}

/// dL/dQ. Patches in the clamp region (Q <= eps) and patches outside every
/// member set get zero.
pub fn loss_gradient_with(
    map: &AttentionMap,
    clusters: &ClusterSet,
    targets: &[TargetDistribution],
    cfg: &LossConfig,
) -> Result<Vec<f64>> {
    check_epsilon(cfg.epsilon)?;
    check_alignment(map, clusters, targets)?;
    let q = map.scores();
    let scale = cfg.scaling.factor(clusters.k());
    let mut grad = vec![0.0; q.len()];
    for (i, t) in targets.iter().enumerate() {
        let members = clusters.members(i);
        if members.is_empty() {
            return Err(Error::EmptyCluster(i));
        }
        match cfg.form {
            KlForm::Generalized => {
                for &x in members {
                    if q[x] > cfg.epsilon {
                        grad[x] -= scale * t.values[x] / q[x];
                    }
                }
            }
            KlForm::Simplex => {
                let p_sum: f64 = members.iter().map(|&x| t.values[x]).sum();
                let q_sum: f64 = members.iter().map(|&x| q[x].max(cfg.epsilon)).sum();
                for &x in members {
                    if q[x] > cfg.epsilon {
                        grad[x] += scale * (1.0 / q_sum - t.values[x] / (p_sum * q[x]));
                    }
                }
            }
        }
    }
    Ok(grad)
}
