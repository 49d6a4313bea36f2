//! Linear probe on frozen representations, and classification metrics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, ParamStore, Tape, Tensor, Var};
use crate::contrastive::Encoder;
use crate::error::{ClarError, Result};
use crate::nn::Linear;
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 500, lr: 1e-2 }
    }
}

/// Softmax classifier `softmax(((x - mean) / std) W + b)`. The feature
/// standardisation is fitted on the training embeddings and then frozen.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    pub store: ParamStore,
    layer: Linear,
    mean: Vec<f64>,
    std: Vec<f64>,
    num_classes: usize,
}

impl LinearProbe {
    pub fn new<R: Rng + ?Sized>(dim: usize, num_classes: usize, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let layer = Linear::new(&mut store, "probe", dim, num_classes, rng);
        Self { store, layer, mean: vec![0.0; dim], std: vec![1.0; dim], num_classes }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn records(&self) -> Vec<(String, Tensor)> {
        let mut r = self.store.records();
        r.push(("probe.feature_mean".into(), Tensor::vector(self.mean.clone())));
        r.push(("probe.feature_std".into(), Tensor::vector(self.std.clone())));
        r
    }

    pub fn from_records(records: &[(String, Tensor)]) -> Result<Self> {
        let get = |n: &str| {
            records
                .iter()
                .find(|(k, _)| k == n)
                .map(|(_, t)| t)
                .ok_or_else(|| ClarError::Checkpoint(format!("missing `{n}`")))
        };
        let w = get("probe.weight")?;
        if w.rank() != 2 {
            return Err(ClarError::Checkpoint("probe.weight must be a matrix".into()));
        }
        let mut probe = Self::new(w.shape()[0], w.shape()[1], &mut seeded(0));
        probe.store.load_records(records)?;
        probe.mean = get("probe.feature_mean")?.data().to_vec();
        probe.std = get("probe.feature_std")?.data().to_vec();
        if probe.mean.len() != probe.dim() || probe.std.len() != probe.dim() {
            return Err(ClarError::Checkpoint("probe standardisation has the wrong length".into()));
        }
        Ok(probe)
    }

    fn standardize(&self, xs: &[Vec<f64>]) -> Result<Tensor> {
        if let Some(x) = xs.iter().find(|x| x.len() != self.dim()) {
            return Err(ClarError::shape("probe", format!("expected dim {}, got {}", self.dim(), x.len())));
        }
        let rows: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect())
            .collect();
        Ok(Tensor::from_rows(&rows))
    }

    /// Logits `[N, C]` recorded on `tape`.
    pub fn logits(&self, tape: &mut Tape, xs: &[Vec<f64>]) -> Result<Var> {
        let x = tape.input(self.standardize(xs)?);
        self.layer.forward(tape, &self.store, x)
    }

    /// Mean cross-entropy of `labels` under the probe.
    pub fn cross_entropy(&self, tape: &mut Tape, xs: &[Vec<f64>], labels: &[usize]) -> Result<Var> {
        if xs.len() != labels.len() || xs.is_empty() {
            return Err(ClarError::invalid("embeddings and labels must be non-empty and equally long"));
        }
        if let Some(&c) = labels.iter().find(|&&c| c >= self.num_classes) {
            return Err(ClarError::invalid(format!("label {c} outside {} classes", self.num_classes)));
        }
        let logits = self.logits(tape, xs)?;
        let lse = tape.logsumexp_rows(logits)?;
        let mut onehot = Tensor::zeros(&[xs.len(), self.num_classes]);
        for (i, &c) in labels.iter().enumerate() {
            onehot.data_mut()[i * self.num_classes + c] = 1.0;
        }
        let onehot = tape.input(onehot);
        let picked = tape.mul(logits, onehot)?;
        let picked = tape.sum_last_axis(picked)?;
        let nll = tape.sub(lse, picked)?;
        Ok(tape.mean(nll))
    }

    pub fn predict(&self, xs: &[Vec<f64>]) -> Result<Vec<usize>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let logits = self.logits(&mut tape, xs)?;
        let t = tape.value(logits);
        Ok((0..xs.len())
            .map(|i| {
                let row = t.row(i);
                (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
            })
            .collect())
    }
}

/// Multinomial logistic regression fitted with full-batch Adam.
pub fn fit_probe<R: Rng + ?Sized>(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    cfg: &ProbeConfig,
    rng: &mut R,
) -> Result<LinearProbe> {
    if embeddings.is_empty() || embeddings.len() != labels.len() {
        return Err(ClarError::invalid("probe needs a non-empty set of labeled embeddings"));
    }
    if num_classes < 1 {
        return Err(ClarError::invalid("probe needs at least one class"));
    }
    let dim = embeddings[0].len();
    let mut probe = LinearProbe::new(dim, num_classes, rng);
    let n = embeddings.len() as f64;
    for j in 0..dim {
        let m = embeddings.iter().map(|x| x[j]).sum::<f64>() / n;
        let v = embeddings.iter().map(|x| (x[j] - m).powi(2)).sum::<f64>() / n;
        probe.mean[j] = m;
        probe.std[j] = if v > 1e-12 { v.sqrt() } else { 1.0 };
    }
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr))?;
    for _ in 0..cfg.epochs {
        probe.store.zero_grad();
        let mut tape = Tape::new();
        let loss = probe.cross_entropy(&mut tape, embeddings, labels)?;
        tape.backward(loss, &mut probe.store)?;
        adam.step(&mut probe.store);
    }
    Ok(probe)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<u64>>,
}

impl Metrics {
    /// Per-class F1; 0 when precision + recall is 0.
    pub fn per_class_f1(&self) -> Vec<f64> {
        let c = self.confusion.len();
        (0..c)
            .map(|k| {
                let tp = self.confusion[k][k] as f64;
                let actual: u64 = self.confusion[k].iter().sum();
                let predicted: u64 = self.confusion.iter().map(|r| r[k]).sum();
                let p = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
                let r = if actual > 0 { tp / actual as f64 } else { 0.0 };
                if p + r > 0.0 {
                    2.0 * p * r / (p + r)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

pub fn compute_metrics(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<Metrics> {
    if truth.is_empty() || truth.len() != predicted.len() {
        return Err(ClarError::invalid("metrics need equally long, non-empty label lists"));
    }
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= num_classes || p >= num_classes {
            return Err(ClarError::invalid(format!("class id {} outside {num_classes} classes", t.max(p))));
        }
        confusion[t][p] += 1;
    }
    let correct: u64 = (0..num_classes).map(|k| confusion[k][k]).sum();
    let mut m = Metrics { accuracy: correct as f64 / truth.len() as f64, macro_f1: 0.0, confusion };
    let f1 = m.per_class_f1();
    m.macro_f1 = f1.iter().sum::<f64>() / num_classes as f64;
    Ok(m)
}

/// Encodes `test` with the frozen encoder and scores the probe.
pub fn evaluate<S: AsRef<[f64]>>(probe: &LinearProbe, encoder: &Encoder, test: &[S], labels: &[usize]) -> Result<Metrics> {
    if test.is_empty() {
        return Err(ClarError::invalid("empty test set"));
    }
    let reps = encoder.embed(test)?;
    let pred = probe.predict(&reps)?;
    compute_metrics(labels, &pred, probe.num_classes())
}
