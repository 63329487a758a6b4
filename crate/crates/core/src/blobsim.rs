//! A differentiable stand-in for the denoiser's latent → cross-attention
//! mapping: the latent is a set of isotropic Gaussian blobs, the attention map
//! is their sum, and a "denoising" trajectory perturbs the latent with noise
//! that shrinks linearly to zero over 50 steps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::{
    min_max_normalize, normalize_pullback, AttentionMap, GaussianKernel, NormalizationRecord,
    SmoothingConfig,
};
use crate::error::{Error, Result};

/// Number of simulated denoising steps; trajectories run t = 50 .. 0.
pub const TOTAL_STEPS: u32 = 50;

pub const MIN_WIDTH: f64 = 0.5;

/// One blob slot. Positions are in patch units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub row: f64,
    pub col: f64,
    pub log_amplitude: f64,
    pub log_width: f64,
}

impl Blob {
    pub fn amplitude(&self) -> f64 {
        self.log_amplitude.exp()
    }

    /// Width after clamping to `[MIN_WIDTH, side]`, and whether the clamp was
    /// inactive (so the width derivative is nonzero).
    pub fn width(&self, side: usize) -> (f64, bool) {
        let w = self.log_width.exp();
        let hi = side as f64;
        if w < MIN_WIDTH {
            (MIN_WIDTH, false)
        } else if w > hi {
            (hi, false)
        } else {
            (w, true)
        }
    }
}

/// Number of scalar coordinates per blob.
pub const COORDS_PER_BLOB: usize = 4;

/// Parameter vector optimized by guidance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub blobs: Vec<Blob>,
}

impl Latent {
    pub fn new(blobs: Vec<Blob>) -> Self {
        Self { blobs }
    }

    pub fn dim(&self) -> usize {
        self.blobs.len() * COORDS_PER_BLOB
    }

    /// Coordinates as `[row, col, log_amplitude, log_width]` per blob.
    pub fn to_vec(&self) -> Vec<f64> {
        self.blobs
            .iter()
            .flat_map(|b| [b.row, b.col, b.log_amplitude, b.log_width])
            .collect()
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len() % COORDS_PER_BLOB, 0);
        Self {
            blobs: v
                .chunks_exact(COORDS_PER_BLOB)
                .map(|c| Blob {
                    row: c[0],
                    col: c[1],
                    log_amplitude: c[2],
                    log_width: c[3],
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }

    /// Hex digest of the exact coordinate bits (first 8 bytes of SHA-256).
    pub fn hash_hex(&self) -> String {
        let mut h = Sha256::new();
        for v in self.to_vec() {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Parameters of the toy generator and its trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    /// Map side H.
    pub size: usize,
    /// Blob slots m.
    pub slots: usize,
    /// Noise standard deviation at t = 50.
    pub noise0: f64,
    pub smoothing: SmoothingConfig,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            size: 64,
            slots: 12,
            noise0: 0.05,
            smoothing: SmoothingConfig::default(),
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if self.size < crate::attention::MIN_SIDE {
            return Err(Error::InvalidParameter(format!(
                "size {} too small",
                self.size
            )));
        }
        if self.slots == 0 {
            return Err(Error::InvalidParameter("slots must be positive".into()));
        }
        if !(self.noise0 >= 0.0 && self.noise0.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise0 {}", self.noise0)));
        }
        GaussianKernel::new(self.smoothing.kernel_size, self.smoothing.sigma)?;
        Ok(())
    }
}

/// Draws the initial latent: positions uniform over the map, log-amplitudes
/// N(0, 0.5), log-widths N(ln 2, 0.3).
pub fn sample_latent(rng: &mut ChaCha8Rng, params: &SimParams) -> Latent {
    let pos = Uniform::new_inclusive(0.0, (params.size - 1) as f64);
    let amp = Normal::new(0.0, 0.5).unwrap();
    let width = Normal::new(2f64.ln(), 0.3).unwrap();
    let blobs = (0..params.slots)
        .map(|_| Blob {
            row: pos.sample(rng),
            col: pos.sample(rng),
            log_amplitude: amp.sample(rng),
            log_width: width.sample(rng),
        })
        .collect();
    Latent { blobs }
}

/// Raw blob-sum attention map.
pub fn render_attention(latent: &Latent, side: usize) -> Result<AttentionMap> {
    AttentionMap::new(side, side, render_raw(latent, side))
}

fn render_raw(latent: &Latent, side: usize) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    for b in &latent.blobs {
        let a = b.amplitude();
        if a == 0.0 {
            continue;
        }
        let (w, _) = b.width(side);
        let inv = 1.0 / (2.0 * w * w);
        for r in 0..side {
            let dr = r as f64 - b.row;
            let er = dr * dr;
            let row = &mut out[r * side..(r + 1) * side];
            for (c, v) in row.iter_mut().enumerate() {
                let dc = c as f64 - b.col;
                *v += a * (-(er + dc * dc) * inv).exp();
            }
        }
    }
    out
}

/// Everything computed on the way from a latent to its normalized map.
#[derive(Debug, Clone)]
pub struct RenderForward {
    pub raw: AttentionMap,
    pub normalized: AttentionMap,
    pub record: NormalizationRecord,
}

/// Render, smooth, normalize.
pub fn render_forward(
    latent: &Latent,
    side: usize,
    smoothing: &SmoothingConfig,
) -> Result<RenderForward> {
    let raw = render_attention(latent, side)?;
    let kernel = GaussianKernel::new(smoothing.kernel_size, smoothing.sigma)?;
    let smoothed = crate::attention::smooth_with(&raw, &kernel);
    let (normalized, record) = min_max_normalize(&smoothed)?;
    Ok(RenderForward {
        raw,
        normalized,
        record,
    })
}

/// Vector-Jacobian product of [`render_forward`]'s normalized output with
/// respect to the latent coordinates (layout of [`Latent::to_vec`]).
pub fn render_pullback(
    latent: &Latent,
    forward: &RenderForward,
    smoothing: &SmoothingConfig,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    let side = forward.raw.side();
    if upstream.len() != side * side {
        return Err(Error::InvalidParameter(
            "upstream gradient has wrong size".into(),
        ));
    }
    let kernel = GaussianKernel::new(smoothing.kernel_size, smoothing.sigma)?;
    let g_smoothed = normalize_pullback(&forward.record, forward.normalized.scores(), upstream);
    let g_raw = kernel.apply_adjoint(side, &g_smoothed);
    Ok(raw_pullback(latent, side, &g_raw))
}

fn raw_pullback(latent: &Latent, side: usize, g_raw: &[f64]) -> Vec<f64> {
    let mut grad = Vec::with_capacity(latent.dim());
    for b in &latent.blobs {
        let a = b.amplitude();
        let (w, width_active) = b.width(side);
        let w2 = w * w;
        let inv = 1.0 / (2.0 * w2);
        let (mut g_row, mut g_col, mut g_amp, mut g_width) = (0.0, 0.0, 0.0, 0.0);
        for r in 0..side {
            let dr = r as f64 - b.row;
            for c in 0..side {
                let g = g_raw[r * side + c];
                if g == 0.0 {
                    continue;
                }
                let dc = c as f64 - b.col;
                let d2 = dr * dr + dc * dc;
                let phi = g * a * (-d2 * inv).exp();
                g_row += phi * dr;
                g_col += phi * dc;
                g_amp += phi;
                g_width += phi * d2;
            }
        }
        grad.push(g_row / w2);
        grad.push(g_col / w2);
        grad.push(g_amp);
        grad.push(if width_active { g_width / w2 } else { 0.0 });
    }
    grad
}

/// Toy denoising state.
#[derive(Debug, Clone)]
pub struct SimState {
    pub latent: Latent,
    pub timestep: u32,
    pub noise0: f64,
    rng: ChaCha8Rng,
}

impl SimState {
    /// Fresh state at t = 50 with the latent drawn from `seed`.
    pub fn from_seed(seed: u64, params: &SimParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let latent = sample_latent(&mut rng, params);
        Self {
            latent,
            timestep: TOTAL_STEPS,
            noise0: params.noise0,
            rng,
        }
    }

    pub fn with_latent(latent: Latent, timestep: u32, noise0: f64, seed: u64) -> Self {
        Self {
            latent,
            timestep,
            noise0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Noise standard deviation applied when stepping from `timestep`.
    pub fn noise_scale(&self) -> f64 {
        noise_scale(self.noise0, self.timestep)
    }
}

/// Linear schedule `noise0 * t / 50`.
pub fn noise_scale(noise0: f64, t: u32) -> f64 {
    noise0 * t as f64 / TOTAL_STEPS as f64
}

/// Adds N(0, noise_scale(t)) to every latent coordinate and decrements t.
pub fn simulate_step(state: &SimState) -> Result<SimState> {
    if state.timestep == 0 {
        return Err(Error::TrajectoryFinished);
    }
    let mut next = state.clone();
    let scale = state.noise_scale();
    let mut coords = next.latent.to_vec();
    if scale > 0.0 {
        let normal = Normal::new(0.0, scale).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for v in coords.iter_mut() {
            *v += normal.sample(&mut next.rng);
        }
        next.latent = Latent::from_slice(&coords);
    }
    next.timestep -= 1;
    Ok(next)
}
