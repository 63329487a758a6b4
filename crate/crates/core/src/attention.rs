//! Attention-map container and the preprocessing applied before clustering:
//! Gaussian smoothing with replicate-edge padding followed by min-max
//! normalization. Both steps expose a pullback so gradients can flow from a
//! loss on the normalized map back to the raw scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible side length of an attention map.
pub const MIN_SIDE: usize = 4;

/// A square grid of attention scores stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    height: usize,
    width: usize,
    scores: Vec<f64>,
}

impl AttentionMap {
    pub fn new(height: usize, width: usize, scores: Vec<f64>) -> Result<Self> {
        if height != width {
            return Err(Error::InvalidMap(format!(
                "map must be square, got {height}x{width}"
            )));
        }
        if height < MIN_SIDE {
            return Err(Error::InvalidMap(format!(
                "side {height} below minimum {MIN_SIDE}"
            )));
        }
        if scores.len() != height * width {
            return Err(Error::InvalidMap(format!(
                "expected {} scores, got {}",
                height * width,
                scores.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidMap(format!("non-finite score at index {i}")));
        }
        Ok(Self {
            height,
            width,
            scores,
        })
    }

    /// Square map with every patch set to `value`.
    pub fn filled(side: usize, value: f64) -> Result<Self> {
        Self::new(side, side, vec![value; side * side])
    }

    /// Builds a square map by evaluating `f(row, col)` on every patch.
    pub fn from_fn(side: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut scores = Vec::with_capacity(side * side);
        for r in 0..side {
            for c in 0..side {
                scores.push(f(r, c));
            }
        }
        Self::new(side, side, scores)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Side length H (= W).
    pub fn side(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn into_scores(self) -> Vec<f64> {
        self.scores
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.width + col]
    }

    pub fn min(&self) -> f64 {
        self.scores.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.scores
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Extremes of the map seen by [`min_max_normalize`]. The indices are held
/// fixed when differentiating through the normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub min_value: f64,
    pub max_value: f64,
    pub argmin_index: usize,
    pub argmax_index: usize,
}

/// Gaussian smoothing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub kernel_size: usize,
    pub sigma: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            kernel_size: 3,
            sigma: 0.5,
        }
    }
}

/// A normalized, square, odd-sized Gaussian kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    size: usize,
    weights: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(size: usize, sigma: f64) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "kernel size must be odd and >= 1, got {size}"
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kernel sigma must be positive, got {sigma}"
            )));
        }
        let half = (size / 2) as i64;
        let two_var = 2.0 * sigma * sigma;
        let mut weights = Vec::with_capacity(size * size);
        for dr in -half..=half {
            for dc in -half..=half {
                let d2 = (dr * dr + dc * dc) as f64;
                weights.push((-d2 / two_var).exp());
            }
        }
        let z: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= z);
        Ok(Self { size, weights })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Row-major coefficients; they sum to one.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, dr: i64, dc: i64) -> f64 {
        let half = (self.size / 2) as i64;
        self.weights[((dr + half) as usize) * self.size + (dc + half) as usize]
    }

    /// Correlates `input` (a `side`×`side` grid) with the kernel, replicating
    /// edge values outside the grid.
    pub fn apply(&self, side: usize, input: &[f64]) -> Vec<f64> {
        if self.size == 1 {
            return input.to_vec();
        }
        let half = (self.size / 2) as i64;
        let last = side as i64 - 1;
        let mut out = vec![0.0; side * side];
        for r in 0..side as i64 {
            for c in 0..side as i64 {
                let mut acc = 0.0;
                let mut w = self.weights.iter();
                for dr in -half..=half {
                    let rr = (r + dr).clamp(0, last) as usize;
                    for dc in -half..=half {
                        let cc = (c + dc).clamp(0, last) as usize;
                        acc += w.next().unwrap() * input[rr * side + cc];
                    }
                }
                out[r as usize * side + c as usize] = acc;
            }
        }
        out
    }

    /// Exact transpose of [`GaussianKernel::apply`]. Interior patches see the
    /// flipped kernel; border patches also collect the weight that padding
    /// replicated from them.
    pub fn apply_adjoint(&self, side: usize, upstream: &[f64]) -> Vec<f64> {
        if self.size == 1 {
            return upstream.to_vec();
        }
        let half = (self.size / 2) as i64;
        let last = side as i64 - 1;
        let mut out = vec![0.0; side * side];
        for r in 0..side as i64 {
            for c in 0..side as i64 {
                let g = upstream[r as usize * side + c as usize];
                if g == 0.0 {
                    continue;
                }
                let mut w = self.weights.iter();
                for dr in -half..=half {
                    let rr = (r + dr).clamp(0, last) as usize;
                    for dc in -half..=half {
                        let cc = (c + dc).clamp(0, last) as usize;
                        out[rr * side + cc] += w.next().unwrap() * g;
                    }
                }
            }
        }
        out
    }
}

/// Smooths `map` with a normalized `kernel_size`×`kernel_size` Gaussian.
pub fn gaussian_smooth(
    map: &AttentionMap,
    kernel_size: usize,
    kernel_sigma: f64,
) -> Result<AttentionMap> {
    let kernel = GaussianKernel::new(kernel_size, kernel_sigma)?;
    Ok(smooth_with(map, &kernel))
}

pub fn smooth_with(map: &AttentionMap, kernel: &GaussianKernel) -> AttentionMap {
    AttentionMap {
        height: map.height,
        width: map.width,
        scores: kernel.apply(map.side(), &map.scores),
    }
}

/// Rescales `map` so that its minimum becomes 0 and its maximum 1.
/// Ties for the extremes resolve to the smallest row-major index.
pub fn min_max_normalize(map: &AttentionMap) -> Result<(AttentionMap, NormalizationRecord)> {
    let mut argmin = 0;
    let mut argmax = 0;
    for (i, &s) in map.scores.iter().enumerate() {
        if s < map.scores[argmin] {
            argmin = i;
        }
        if s > map.scores[argmax] {
            argmax = i;
        }
    }
    let lo = map.scores[argmin];
    let hi = map.scores[argmax];
    let span = hi - lo;
    if span.is_nan() || span <= 0.0 {
        return Err(Error::DegenerateMap);
    }
    let scores = map.scores.iter().map(|&s| (s - lo) / span).collect();
    let record = NormalizationRecord {
        min_value: lo,
        max_value: hi,
        argmin_index: argmin,
        argmax_index: argmax,
    };
    Ok((
        AttentionMap {
            height: map.height,
            width: map.width,
            scores,
        },
        record,
    ))
}

/// Vector-Jacobian product of [`min_max_normalize`] with the extreme indices
/// frozen at their forward values.
pub fn normalize_pullback(
    record: &NormalizationRecord,
    normalized: &[f64],
    upstream: &[f64],
) -> Vec<f64> {
    let span = record.max_value - record.min_value;
    let mut grad: Vec<f64> = upstream.iter().map(|g| g / span).collect();
    let mut d_min = 0.0;
    let mut d_max = 0.0;
    for (&g, &y) in upstream.iter().zip(normalized) {
        d_min += g * (y - 1.0);
        d_max -= g * y;
    }
    grad[record.argmin_index] += d_min / span;
    grad[record.argmax_index] += d_max / span;
    grad
}

/// Smooth then normalize.
pub fn preprocess(
    raw: &AttentionMap,
    cfg: &SmoothingConfig,
) -> Result<(AttentionMap, NormalizationRecord)> {
    let smoothed = gaussian_smooth(raw, cfg.kernel_size, cfg.sigma)?;
    min_max_normalize(&smoothed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(side: usize, v: &[f64]) -> AttentionMap {
        AttentionMap::new(side, side, v.to_vec()).unwrap()
    }

    #[test]
    fn constant_map_survives_smoothing() {
        let m = AttentionMap::filled(6, 0.37).unwrap();
        for (size, sigma) in [(1, 1.0), (3, 0.5), (5, 2.0)] {
            let s = gaussian_smooth(&m, size, sigma).unwrap();
            for &v in s.scores() {
                assert!((v - 0.37).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn unit_kernel_is_identity() {
        let m = AttentionMap::from_fn(5, |r, c| (r * 7 + c * 3) as f64 * 0.113).unwrap();
        let s = gaussian_smooth(&m, 1, 0.5).unwrap();
        assert_eq!(s, m);
    }

    #[test]
    fn impulse_response_center() {
        let m = AttentionMap::from_fn(5, |r, c| if r == 2 && c == 2 { 1.0 } else { 0.0 }).unwrap();
        let s = gaussian_smooth(&m, 3, 0.5).unwrap();
        // var = 0.25 -> exponents -1/(2*0.25) = -2 and -2/(2*0.25) = -4
        let z = 1.0 + 4.0 * (-2.0f64).exp() + 4.0 * (-4.0f64).exp();
        assert!((s.get(2, 2) - 1.0 / z).abs() < 1e-15);
        assert!((s.get(1, 2) - (-2.0f64).exp() / z).abs() < 1e-15);
        assert!((s.get(1, 1) - (-4.0f64).exp() / z).abs() < 1e-15);
    }

    #[test]
    fn kernel_rejects_bad_parameters() {
        assert!(GaussianKernel::new(2, 0.5).is_err());
        assert!(GaussianKernel::new(0, 0.5).is_err());
        assert!(GaussianKernel::new(3, 0.0).is_err());
        assert!(GaussianKernel::new(3, f64::NAN).is_err());
    }

    #[test]
    fn kernel_sums_to_one() {
        for size in [1, 3, 5, 7] {
            for sigma in [0.3, 0.5, 1.0, 3.0] {
                let k = GaussianKernel::new(size, sigma).unwrap();
                let s: f64 = k.weights().iter().sum();
                assert!((s - 1.0).abs() <= 1e-15, "{size} {sigma} {s}");
            }
        }
    }

    #[test]
    fn non_finite_scores_rejected() {
        let mut v = vec![0.0; 16];
        v[5] = f64::NAN;
        let err = AttentionMap::new(4, 4, v).unwrap_err();
        assert!(err.to_string().starts_with("invalid attention map"));
        let mut v = vec![0.0; 16];
        v[0] = f64::INFINITY;
        assert!(AttentionMap::new(4, 4, v).is_err());
    }

    #[test]
    fn shape_validation() {
        assert!(AttentionMap::new(4, 5, vec![0.0; 20]).is_err());
        assert!(AttentionMap::new(3, 3, vec![0.0; 9]).is_err());
        assert!(AttentionMap::new(4, 4, vec![0.0; 15]).is_err());
    }

    #[test]
    fn normalize_worked_example() {
        let m = map(
            4,
            &[
                0.2, 0.7, 1.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2,
            ],
        );
        let (n, rec) = min_max_normalize(&m).unwrap();
        for (a, b) in n.scores()[..4].iter().zip([0.0, 0.5, 1.0, 0.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(rec.argmin_index, 0);
        assert_eq!(rec.argmax_index, 2);
        assert_eq!(rec.min_value, 0.2);
        assert_eq!(rec.max_value, 1.2);
    }

    #[test]
    fn normalize_fixed_point() {
        let m = AttentionMap::from_fn(4, |r, c| (r * 4 + c) as f64 / 15.0).unwrap();
        let (n, _) = min_max_normalize(&m).unwrap();
        for (a, b) in n.scores().iter().zip(m.scores()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_constant_is_error() {
        let m = AttentionMap::filled(4, 0.5).unwrap();
        let err = min_max_normalize(&m).unwrap_err();
        assert_eq!(err, Error::DegenerateMap);
        assert_eq!(err.to_string(), "degenerate map: constant scores");
    }

    #[test]
    fn preprocess_constant_is_error() {
        let m = AttentionMap::filled(8, 2.0).unwrap();
        assert_eq!(
            preprocess(&m, &SmoothingConfig::default()).unwrap_err(),
            Error::DegenerateMap
        );
    }

    #[test]
    fn preprocess_two_blobs_keeps_taller_peak() {
        let blob = |r: usize, c: usize, pr: f64, pc: f64, a: f64| {
            let d2 = (r as f64 - pr).powi(2) + (c as f64 - pc).powi(2);
            a * (-d2 / 4.0).exp()
        };
        let m = AttentionMap::from_fn(16, |r, c| {
            blob(r, c, 4.0, 4.0, 0.6) + blob(r, c, 11.0, 10.0, 1.0)
        })
        .unwrap();
        let (n, rec) = preprocess(&m, &SmoothingConfig::default()).unwrap();
        assert_eq!(rec.argmax_index, 11 * 16 + 10);
        assert_eq!(n.get(11, 10), 1.0);
        assert!(n.scores().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn normalize_ties_break_to_first_index() {
        let m = map(
            4,
            &[
                1.0, 0.0, 1.0, 0.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5,
            ],
        );
        let (_, rec) = min_max_normalize(&m).unwrap();
        assert_eq!(rec.argmax_index, 0);
        assert_eq!(rec.argmin_index, 1);
    }

    #[test]
    fn adjoint_identity() {
        // <K x, y> == <x, K^T y>
        let side = 7;
        let x: Vec<f64> = (0..side * side)
            .map(|i| ((i * 37 % 11) as f64).sin())
            .collect();
        let y: Vec<f64> = (0..side * side)
            .map(|i| ((i * 13 % 17) as f64).cos())
            .collect();
        for (size, sigma) in [(3, 0.5), (5, 1.3)] {
            let k = GaussianKernel::new(size, sigma).unwrap();
            let kx = k.apply(side, &x);
            let kty = k.apply_adjoint(side, &y);
            let lhs: f64 = kx.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&kty).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn normalize_pullback_matches_finite_differences() {
        let side = 5;
        let x: Vec<f64> = (0..side * side)
            .map(|i| ((i as f64) * 0.77).sin() + 0.1 * i as f64)
            .collect();
        let up: Vec<f64> = (0..side * side).map(|i| ((i as f64) * 1.3).cos()).collect();
        let m = AttentionMap::new(side, side, x.clone()).unwrap();
        let (n, rec) = min_max_normalize(&m).unwrap();
        let g = normalize_pullback(&rec, n.scores(), &up);
        let f = |v: &[f64]| {
            let (n, _) =
                min_max_normalize(&AttentionMap::new(side, side, v.to_vec()).unwrap()).unwrap();
            n.scores().iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-6;
        for i in 0..x.len() {
            let mut p = x.clone();
            p[i] += h;
            let mut q = x.clone();
            q[i] -= h;
            let fd = (f(&p) - f(&q)) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() < 1e-7 * (1.0 + fd.abs()),
                "{i}: {fd} vs {}",
                g[i]
            );
        }
    }
}
