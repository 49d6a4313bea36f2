//! Adaptive positive-pair weights.
//!
//! A crop is compared window-by-window against activity-free templates; the
//! fraction of windows whose mean DTW distance exceeds the crop's average
//! score measures how much motion it contains. Pairs of crops with more
//! motion get larger weights in the contrastive numerator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ClarError, Result};
use crate::signal::{dtw_distance, sliding_windows};

/// An activity-free window of length `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticTemplate {
    pub window: Vec<f64>,
}

/// Per-window response scores of one sequence and their threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    pub scores: Vec<f64>,
    pub threshold: f64,
}

impl ResponseMap {
    /// Map with the threshold set to the mean score.
    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(ClarError::invalid("empty response map"));
        }
        let threshold = scores.iter().sum::<f64>() / scores.len() as f64;
        Ok(Self { scores, threshold })
    }

    pub fn active_windows(&self) -> usize {
        self.scores.iter().filter(|&&s| s > self.threshold).count()
    }
}

/// Draws `k` distinct windows of length `h` uniformly over all window
/// positions in the pool.
pub fn select_templates<S: AsRef<[f64]>, R: Rng + ?Sized>(
    pool: &[S],
    k: usize,
    h: usize,
    rng: &mut R,
) -> Result<Vec<StaticTemplate>> {
    if pool.is_empty() {
        return Err(ClarError::invalid("static pool is empty"));
    }
    if k < 1 || h < 1 {
        return Err(ClarError::invalid(format!("need k >= 1 and h >= 1, got k={k}, h={h}")));
    }
    let mut counts = Vec::with_capacity(pool.len());
    for (i, s) in pool.iter().enumerate() {
        let n = s.as_ref().len();
        if n < h {
            return Err(ClarError::invalid(format!("static sequence {i} has length {n} < window {h}")));
        }
        counts.push(n - h + 1);
    }
    let total: usize = counts.iter().sum();
    if k > total {
        return Err(ClarError::invalid(format!("asked for {k} templates but the pool has {total} windows")));
    }
    let picks = rand::seq::index::sample(rng, total, k);
    Ok(picks
        .into_iter()
        .map(|mut flat| {
            let mut item = 0;
            while flat >= counts[item] {
                flat -= counts[item];
                item += 1;
            }
            StaticTemplate { window: pool[item].as_ref()[flat..flat + h].to_vec() }
        })
        .collect())
}

/// Mean DTW distance of every length-`h` window of `x` to the templates.
pub fn response_map(x: &[f64], templates: &[StaticTemplate], h: usize) -> Result<ResponseMap> {
    if templates.is_empty() {
        return Err(ClarError::invalid("no static templates"));
    }
    if let Some(t) = templates.iter().find(|t| t.window.len() != h) {
        return Err(ClarError::invalid(format!("template length {} != window {h}", t.window.len())));
    }
    let k = templates.len() as f64;
    let scores = sliding_windows(x, h)?
        .into_iter()
        .map(|w| {
            let mut s = 0.0;
            for t in templates {
                s += dtw_distance(w, &t.window)?;
            }
            Ok(s / k)
        })
        .collect::<Result<Vec<f64>>>()?;
    ResponseMap::from_scores(scores)
}

/// `(active / N_w)^alpha`, where a window is active when its score strictly
/// exceeds the threshold.
pub fn sample_weight(map: &ResponseMap, alpha: f64) -> Result<f64> {
    if map.scores.is_empty() {
        return Err(ClarError::invalid("empty response map"));
    }
    if !(alpha > 0.0) {
        return Err(ClarError::invalid(format!("alpha must be > 0, got {alpha}")));
    }
    let frac = map.active_windows() as f64 / map.scores.len() as f64;
    Ok(frac.powf(alpha))
}

pub fn pair_weight(w_i: f64, w_j: f64) -> f64 {
    w_i + w_j
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightingConfig {
    /// Window length; `None` means `max(4, round(L / 8))`.
    pub window: Option<usize>,
    pub templates: usize,
    pub alpha: f64,
    /// Lower bound applied to each sample weight. 0 keeps the raw value.
    pub floor: f64,
}

impl Default for WeightingConfig {
    fn default() -> Self {
        Self { window: None, templates: 5, alpha: 0.5, floor: 0.0 }
    }
}

impl WeightingConfig {
    pub fn window_for(&self, seq_len: usize) -> usize {
        self.window.unwrap_or_else(|| ((seq_len as f64 / 8.0).round() as usize).max(4))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(ClarError::invalid(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.templates < 1 {
            return Err(ClarError::invalid("need at least one static template"));
        }
        if !(0.0..=1.0).contains(&self.floor) {
            return Err(ClarError::invalid("weight floor must lie in [0, 1]"));
        }
        if self.window == Some(0) {
            return Err(ClarError::invalid("window length must be positive"));
        }
        Ok(())
    }
}

/// Templates plus settings; computes weights of individual crops.
#[derive(Debug, Clone)]
pub struct AdaptiveWeighter {
    pub templates: Vec<StaticTemplate>,
    pub window: usize,
    pub alpha: f64,
    pub floor: f64,
}

impl AdaptiveWeighter {
    pub fn new<S: AsRef<[f64]>, R: Rng + ?Sized>(
        static_pool: &[S],
        seq_len: usize,
        cfg: &WeightingConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let window = cfg.window_for(seq_len);
        let templates = select_templates(static_pool, cfg.templates, window, rng)?;
        Ok(Self { templates, window, alpha: cfg.alpha, floor: cfg.floor })
    }

    pub fn sample_weight(&self, x: &[f64]) -> Result<f64> {
        let map = response_map(x, &self.templates, self.window)?;
        Ok(sample_weight(&map, self.alpha)?.max(self.floor))
    }

    pub fn pair_weight(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        Ok(pair_weight(self.sample_weight(a)?, self.sample_weight(b)?))
    }
}
