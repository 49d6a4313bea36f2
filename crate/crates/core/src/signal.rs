//! Deterministic signal primitives: undecimated Haar bands, dynamic time
//! warping, warp aggregation, sliding windows and crop-resize views.

use std::ops::Deref;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ClarError, Result};

/// A non-empty series of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence(Vec<f64>);

impl Sequence {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(ClarError::invalid("sequence must be non-empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ClarError::invalid(format!("sequence value {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Sequence {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Length-preserving high and low frequency components of a series.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBands {
    pub high: Vec<f64>,
    pub low: Vec<f64>,
}

/// Single-level undecimated Haar analysis with periodic boundary:
/// `low[i] = (x[i] + x[i+1]) / 2`, `high[i] = (x[i] - x[i+1]) / 2`, so
/// `low + high == x`.
pub fn haar_analysis(x: &[f64]) -> Result<WaveletBands> {
    let n = x.len();
    if n < 2 {
        return Err(ClarError::invalid(format!("haar analysis needs at least 2 samples, got {n}")));
    }
    let mut high = Vec::with_capacity(n);
    let mut low = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = (x[i], x[(i + 1) % n]);
        low.push((a + b) / 2.0);
        high.push((a - b) / 2.0);
    }
    Ok(WaveletBands { high, low })
}

/// High band of [`haar_analysis`].
pub fn high_pass(x: &[f64]) -> Result<Vec<f64>> {
    haar_analysis(x).map(|b| b.high)
}

/// Low band of [`haar_analysis`].
pub fn low_pass(x: &[f64]) -> Result<Vec<f64>> {
    haar_analysis(x).map(|b| b.low)
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(ClarError::invalid("dtw needs non-empty sequences"));
    }
    Ok(())
}

/// DTW distance with absolute-difference local cost and no window.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![0.0; m];
    for (i, &ai) in a.iter().enumerate() {
        for j in 0..m {
            let c = (ai - b[j]).abs();
            cur[j] = c + match (i, j) {
                (0, 0) => 0.0,
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => prev[j - 1].min(prev[j]).min(cur[j - 1]),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Full accumulated-cost matrix, row-major `[a.len(), b.len()]`.
fn dtw_matrix(a: &[f64], b: &[f64]) -> Vec<f64> {
    let (n, m) = (a.len(), b.len());
    let mut d = vec![0.0f64; n * m];
    for i in 0..n {
        for j in 0..m {
            let c = (a[i] - b[j]).abs();
            d[i * m + j] = c + match (i, j) {
                (0, 0) => 0.0,
                (0, _) => d[j - 1],
                (_, 0) => d[(i - 1) * m],
                _ => d[(i - 1) * m + j - 1].min(d[(i - 1) * m + j]).min(d[i * m + j - 1]),
            };
        }
    }
    d
}

/// Monotone alignment from `(0, 0)` to `(n-1, m-1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarpingPath {
    pub pairs: Vec<(usize, usize)>,
}

impl WarpingPath {
    /// Sum of `|a[i] - b[j]|` along the path.
    pub fn cost(&self, a: &[f64], b: &[f64]) -> f64 {
        self.pairs.iter().map(|&(i, j)| (a[i] - b[j]).abs()).sum()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Optimal warping path. Ties prefer the diagonal predecessor, then `(i-1, j)`.
pub fn dtw_path(a: &[f64], b: &[f64]) -> Result<WarpingPath> {
    check_pair(a, b)?;
    let m = b.len();
    let d = dtw_matrix(a, b);
    let (mut i, mut j) = (a.len() - 1, m - 1);
    let mut pairs = vec![(i, j)];
    while i > 0 || j > 0 {
        (i, j) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = d[(i - 1) * m + j - 1];
            let up = d[(i - 1) * m + j];
            let left = d[i * m + j - 1];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        pairs.push((i, j));
    }
    pairs.reverse();
    Ok(WarpingPath { pairs })
}

/// Linear resampling onto `target` evenly spaced points spanning the input.
pub fn resample_linear(x: &[f64], target: usize) -> Vec<f64> {
    let n = x.len();
    if n == 1 || target == 1 {
        return vec![x[0]; target];
    }
    (0..target)
        .map(|k| {
            let pos = (k * (n - 1)) as f64 / (target - 1) as f64;
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            if frac == 0.0 || lo + 1 >= n {
                x[lo.min(n - 1)]
            } else {
                x[lo] * (1.0 - frac) + x[lo + 1] * frac
            }
        })
        .collect()
}

/// Averages `a` and `b` along their warping path, then resamples the merged
/// series back onto `a`'s timeline.
pub fn warp_aggregate(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let path = dtw_path(a, b)?;
    let merged: Vec<f64> = path.pairs.iter().map(|&(i, j)| (a[i] + b[j]) / 2.0).collect();
    Ok(resample_linear(&merged, a.len()))
}

/// All windows of length `h` with stride 1.
pub fn sliding_windows(x: &[f64], h: usize) -> Result<Vec<&[f64]>> {
    if h == 0 || h > x.len() {
        return Err(ClarError::invalid(format!("window length {h} invalid for sequence of length {}", x.len())));
    }
    Ok(x.windows(h).collect())
}

/// Contiguous crop of `round(crop_fraction * L)` samples starting at
/// `round(offset_fraction * (L - crop_len))`, resampled to `target_len`.
pub fn crop_resize(x: &[f64], crop_fraction: f64, offset_fraction: f64, target_len: usize) -> Result<Vec<f64>> {
    if !(crop_fraction > 0.0 && crop_fraction <= 1.0) {
        return Err(ClarError::invalid(format!("crop fraction {crop_fraction} outside (0, 1]")));
    }
    if !(0.0..1.0).contains(&offset_fraction) {
        return Err(ClarError::invalid(format!("offset fraction {offset_fraction} outside [0, 1)")));
    }
    if target_len == 0 {
        return Err(ClarError::invalid("target length must be positive"));
    }
    let l = x.len();
    let crop_len = (crop_fraction * l as f64).round() as usize;
    if crop_len < 2 {
        return Err(ClarError::invalid(format!("degenerate crop of {crop_len} samples")));
    }
    let start = (offset_fraction * (l - crop_len) as f64).round() as usize;
    Ok(resample_linear(&x[start..start + crop_len], target_len))
}

/// Ranges for randomly drawn crops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CropRange {
    pub min_fraction: f64,
    pub max_fraction: f64,
}

impl Default for CropRange {
    fn default() -> Self {
        Self { min_fraction: 0.6, max_fraction: 0.9 }
    }
}

impl CropRange {
    pub fn validate(&self) -> Result<()> {
        let ok = self.min_fraction > 0.0 && self.max_fraction <= 1.0 && self.min_fraction <= self.max_fraction;
        if !ok {
            return Err(ClarError::invalid(format!(
                "crop range [{}, {}] must satisfy 0 < min <= max <= 1",
                self.min_fraction, self.max_fraction
            )));
        }
        Ok(())
    }

    /// Draws `(crop_fraction, offset_fraction)`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let crop = if self.max_fraction > self.min_fraction {
            rng.random_range(self.min_fraction..=self.max_fraction)
        } else {
            self.min_fraction
        };
        (crop, rng.random_range(0.0..1.0))
    }
}

/// [`crop_resize`] with fractions drawn from `range`.
pub fn random_crop_resize<R: Rng + ?Sized>(x: &[f64], range: &CropRange, target_len: usize, rng: &mut R) -> Result<Vec<f64>> {
    let (crop, offset) = range.draw(rng);
    crop_resize(x, crop, offset, target_len)
}
