//! Encoder, projection head, weighted NT-Xent and the pretraining loop.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, ParamStore, Tape, Tensor, Var};
use crate::data::ReferenceTable;
use crate::diffusion::{conditioned_generate, EpsNet, GuidanceConfig, NoiseSchedule};
use crate::error::{ClarError, Result};
use crate::nn::{Conv1d, Linear};
use crate::signal::{random_crop_resize, CropRange};
use crate::weighting::{AdaptiveWeighter, WeightingConfig};

pub const REPR_DIM: usize = 32;
pub const PROJ_DIM: usize = 16;

/// Two strided convolutions, global average pooling and a dense layer
/// produce the representation; a two-layer head maps it onto the unit sphere.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub store: ParamStore,
    input_len: usize,
    conv1: Conv1d,
    conv2: Conv1d,
    fc: Linear,
    head1: Linear,
    head2: Linear,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(input_len: usize, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let conv1 = Conv1d::new(&mut store, "enc.conv1", 1, 8, 5, 2, rng);
        let conv2 = Conv1d::new(&mut store, "enc.conv2", 8, 16, 5, 2, rng);
        if input_len < 5 || conv1.output_len(input_len) < 5 {
            return Err(ClarError::invalid(format!("encoder input length {input_len} is too short")));
        }
        let fc = Linear::new(&mut store, "enc.fc", 16, REPR_DIM, rng);
        let head1 = Linear::new(&mut store, "head.fc1", REPR_DIM, REPR_DIM, rng);
        let head2 = Linear::new(&mut store, "head.fc2", REPR_DIM, PROJ_DIM, rng);
        Ok(Self { store, input_len, conv1, conv2, fc, head1, head2 })
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    /// Checkpoint records plus a `meta.input_len` scalar.
    pub fn records(&self) -> Vec<(String, Tensor)> {
        let mut r = self.store.records();
        r.push(("meta.input_len".into(), Tensor::scalar(self.input_len as f64)));
        r
    }

    pub fn from_records(records: &[(String, Tensor)]) -> Result<Self> {
        let len = records
            .iter()
            .find(|(k, _)| k == "meta.input_len")
            .map(|(_, t)| t.item() as usize)
            .ok_or_else(|| ClarError::Checkpoint("missing `meta.input_len`".into()))?;
        let mut enc = Self::new(len, &mut crate::rng::seeded(0))?;
        enc.store.load_records(records)?;
        Ok(enc)
    }

    fn input(&self, tape: &mut Tape, xs: &[&[f64]]) -> Result<Var> {
        if xs.is_empty() {
            return Err(ClarError::invalid("empty encoder batch"));
        }
        if let Some(x) = xs.iter().find(|x| x.len() != self.input_len) {
            return Err(ClarError::shape("encoder", format!("expected [{}], got [{}]", self.input_len, x.len())));
        }
        let t = Tensor::from_rows(xs);
        let x = tape.input(t);
        tape.reshape(x, &[xs.len(), 1, self.input_len])
    }

    /// `[B, L]` sequences -> `[B, REPR_DIM]` representations.
    pub fn represent(&self, tape: &mut Tape, xs: &[&[f64]]) -> Result<Var> {
        let x = self.input(tape, xs)?;
        let h = self.conv1.forward(tape, &self.store, x)?;
        let h = tape.relu(h);
        let h = self.conv2.forward(tape, &self.store, h)?;
        let h = tape.relu(h);
        let h = tape.mean_last_axis(h)?;
        self.fc.forward(tape, &self.store, h)
    }

    /// Representations -> unit-norm projections.
    pub fn project(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let p = self.head1.forward(tape, &self.store, h)?;
        let p = tape.relu(p);
        let p = self.head2.forward(tape, &self.store, p)?;
        tape.l2_normalize(p)
    }

    pub fn encode_project_batch(&self, tape: &mut Tape, xs: &[&[f64]]) -> Result<Var> {
        let h = self.represent(tape, xs)?;
        self.project(tape, h)
    }

    /// Unit-norm embedding of one sequence.
    pub fn encode_project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let z = self.encode_project_batch(&mut tape, &[x])?;
        Ok(tape.value(z).data().to_vec())
    }

    /// Frozen representations used by the linear probe.
    pub fn embed<S: AsRef<[f64]>>(&self, xs: &[S]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(256) {
            let refs: Vec<&[f64]> = chunk.iter().map(|x| x.as_ref()).collect();
            let mut tape = Tape::new();
            let h = self.represent(&mut tape, &refs)?;
            let t = tape.value(h);
            out.extend((0..refs.len()).map(|i| t.row(i).to_vec()));
        }
        Ok(out)
    }
}

/// `2M` unit vectors where rows `2k` and `2k+1` form positive pair `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub embeddings: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl EmbeddingBatch {
    pub fn new(embeddings: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let b = Self { embeddings, weights };
        b.validate()?;
        Ok(b)
    }

    pub fn pairs(&self) -> usize {
        self.embeddings.len() / 2
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.embeddings.len();
        if n % 2 != 0 {
            return Err(ClarError::invalid(format!("odd number of embeddings ({n})")));
        }
        if n / 2 < 2 {
            return Err(ClarError::invalid("need at least 2 positive pairs so that negatives exist"));
        }
        if self.weights.len() != n / 2 {
            return Err(ClarError::invalid(format!("{} weights for {} pairs", self.weights.len(), n / 2)));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(ClarError::invalid("pair weights must be finite"));
        }
        let d = self.embeddings[0].len();
        for (i, e) in self.embeddings.iter().enumerate() {
            if e.len() != d {
                return Err(ClarError::shape("weighted_ntxent", format!("row {i} has dim {} != {d}", e.len())));
            }
            let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(ClarError::invalid(format!("embedding {i} has norm {norm}, expected 1")));
            }
        }
        Ok(())
    }
}

const SELF_MASK: f64 = -1e9;

/// Weighted NT-Xent over `z: [2M, d]` unit rows with pairs `(2k, 2k+1)`:
/// the mean over all `2M` anchors of
/// `-W_k sim(z_i, z_j) / tau + log sum_{k != i} exp(sim(z_i, z_k) / tau)`.
pub fn weighted_ntxent_var(tape: &mut Tape, z: Var, weights: &[f64], tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(ClarError::invalid(format!("temperature must be > 0, got {tau}")));
    }
    let shape = tape.value(z).shape().to_vec();
    if shape.len() != 2 || shape[0] % 2 != 0 || shape[0] / 2 != weights.len() {
        return Err(ClarError::shape("weighted_ntxent", format!("{shape:?} with {} weights", weights.len())));
    }
    let n = shape[0];
    if n < 4 {
        return Err(ClarError::invalid("need at least 2 positive pairs so that negatives exist"));
    }
    let zt = tape.transpose(z)?;
    let sim = tape.matmul(z, zt)?;
    let logits = tape.scale(sim, 1.0 / tau);
    let mut mask = Tensor::zeros(&[n, n]);
    let mut pos = Tensor::zeros(&[n, n]);
    for i in 0..n {
        mask.data_mut()[i * n + i] = SELF_MASK;
        let j = i ^ 1;
        pos.data_mut()[i * n + j] = weights[i / 2] / tau;
    }
    let mask = tape.input(mask);
    let masked = tape.add(logits, mask)?;
    let lse = tape.logsumexp_rows(masked)?;
    let denom = tape.sum(lse);
    let pos = tape.input(pos);
    let num = tape.mul(sim, pos)?;
    let num = tape.sum(num);
    let diff = tape.sub(denom, num)?;
    Ok(tape.scale(diff, 1.0 / n as f64))
}

pub fn weighted_ntxent(batch: &EmbeddingBatch, tau: f64) -> Result<f64> {
    batch.validate()?;
    let mut tape = Tape::new();
    let z = tape.input(Tensor::from_rows(&batch.embeddings));
    let loss = weighted_ntxent_var(&mut tape, z, &batch.weights, tau)?;
    Ok(tape.value(loss).item())
}

/// Sum of the augmented-view and original-view losses.
pub fn total_loss(aug: &EmbeddingBatch, ori: &EmbeddingBatch, tau: f64) -> Result<f64> {
    Ok(weighted_ntxent(aug, tau)? + weighted_ntxent(ori, tau)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub tau: f64,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub crop: CropRange,
    pub use_augmentation: bool,
    pub use_weighting: bool,
    pub weighting: WeightingConfig,
    /// Augmented samples generated per source before training; positive
    /// pairs draw two of them. 0 regenerates both samples at every step.
    pub aug_bank: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            batch: 50,
            epochs: 50,
            lr: 1e-4,
            crop: CropRange::default(),
            use_augmentation: true,
            use_weighting: true,
            weighting: WeightingConfig::default(),
            aug_bank: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(ClarError::invalid(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.batch < 2 {
            return Err(ClarError::invalid("pretraining batch must hold at least 2 sources"));
        }
        if !(self.lr > 0.0) {
            return Err(ClarError::invalid("learning rate must be > 0"));
        }
        self.crop.validate()?;
        self.weighting.validate()
    }
}

/// The trained noise predictor plus sampling settings.
#[derive(Debug, Clone, Copy)]
pub struct Augmenter<'a> {
    pub net: &'a EpsNet,
    pub schedule: &'a NoiseSchedule,
    pub guidance: &'a GuidanceConfig,
}

impl Augmenter<'_> {
    pub fn generate<R: Rng>(&self, src: &[f64], reference: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        conditioned_generate(src, reference, self.net, self.schedule, self.guidance, rng)
    }
}

/// Unlabeled and labeled training sequences with their reference table.
#[derive(Debug, Clone, Copy)]
pub struct PretrainData<'a> {
    pub train: &'a [Vec<f64>],
    pub references: &'a ReferenceTable,
    pub static_pool: &'a [Vec<f64>],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub l_aug: f64,
    pub l_ori: f64,
    pub l_all: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub encoder: Encoder,
    pub history: Vec<LossRecord>,
}

impl PretrainOutput {
    /// Mean `l_all` per epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let epochs = self.history.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
        (0..epochs)
            .map(|e| {
                let v: Vec<f64> = self.history.iter().filter(|r| r.epoch == e).map(|r| r.l_all).collect();
                v.iter().sum::<f64>() / v.len().max(1) as f64
            })
            .collect()
    }
}

/// Generates `per_source` augmented samples for every training sequence.
pub fn build_aug_bank<R: Rng>(
    data: &PretrainData<'_>,
    aug: &Augmenter<'_>,
    per_source: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut bank = Vec::with_capacity(data.train.len());
    for (i, src) in data.train.iter().enumerate() {
        let mut gens = Vec::with_capacity(per_source);
        for _ in 0..per_source {
            let r = data.references.draw(i, rng)?;
            gens.push(aug.generate(src, &data.train[r], rng)?);
        }
        bank.push(gens);
    }
    Ok(bank)
}

struct ViewBatch {
    views: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

fn views_for<R: Rng>(
    pairs: &[(Vec<f64>, Vec<f64>)],
    cfg: &PretrainConfig,
    weighter: Option<&AdaptiveWeighter>,
    len: usize,
    rng: &mut R,
) -> Result<ViewBatch> {
    let mut views = Vec::with_capacity(pairs.len() * 2);
    let mut weights = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let va = random_crop_resize(a, &cfg.crop, len, rng)?;
        let vb = random_crop_resize(b, &cfg.crop, len, rng)?;
        weights.push(match weighter {
            Some(w) => w.pair_weight(&va, &vb)?,
            None => 1.0,
        });
        views.push(va);
        views.push(vb);
    }
    Ok(ViewBatch { views, weights })
}

fn batch_loss(encoder: &Encoder, tape: &mut Tape, vb: &ViewBatch, tau: f64) -> Result<Var> {
    let refs: Vec<&[f64]> = vb.views.iter().map(Vec::as_slice).collect();
    let z = encoder.encode_project_batch(tape, &refs)?;
    weighted_ntxent_var(tape, z, &vb.weights, tau)
}

/// Contrastive pretraining. With augmentation enabled each positive pair of
/// the augmented loss is two crops of two generated descendants of one
/// source; the original-view loss always uses two crops of the source.
/// A supplied `bank` (from [`build_aug_bank`]) replaces per-step generation.
pub fn pretrain<R: Rng>(
    data: &PretrainData<'_>,
    augmenter: Option<&Augmenter<'_>>,
    bank: Option<&[Vec<Vec<f64>>]>,
    cfg: &PretrainConfig,
    rng: &mut R,
) -> Result<PretrainOutput> {
    cfg.validate()?;
    let n = data.train.len();
    if n < 2 {
        return Err(ClarError::invalid("pretraining needs at least 2 training sequences"));
    }
    let len = data.train[0].len();
    if cfg.use_augmentation && augmenter.is_none() && bank.is_none() {
        return Err(ClarError::MissingArtifact(
            "augmentation is enabled but no trained noise predictor was supplied".into(),
        ));
    }
    if let Some(b) = bank {
        if b.len() != n || b.iter().any(|g| g.len() < 2) {
            return Err(ClarError::invalid("augmentation bank needs at least 2 samples per source"));
        }
    }
    let mut encoder = Encoder::new(len, rng)?;
    let weighter = if cfg.use_weighting {
        Some(AdaptiveWeighter::new(data.static_pool, len, &cfg.weighting, rng)?)
    } else {
        None
    };
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr))?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch) {
            if chunk.len() < 2 {
                continue;
            }
            let ori_pairs: Vec<(Vec<f64>, Vec<f64>)> =
                chunk.iter().map(|&i| (data.train[i].clone(), data.train[i].clone())).collect();
            let ori = views_for(&ori_pairs, cfg, weighter.as_ref(), len, rng)?;
            let aug = if cfg.use_augmentation {
                let mut pairs = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    pairs.push(match bank {
                        Some(b) => {
                            let picks: Vec<&Vec<f64>> = b[i].choose_multiple(rng, 2).collect();
                            (picks[0].clone(), picks[1].clone())
                        }
                        None => {
                            let a = augmenter.expect("checked above");
                            let r1 = data.references.draw(i, rng)?;
                            let g1 = a.generate(&data.train[i], &data.train[r1], rng)?;
                            let r2 = data.references.draw(i, rng)?;
                            let g2 = a.generate(&data.train[i], &data.train[r2], rng)?;
                            (g1, g2)
                        }
                    });
                }
                Some(views_for(&pairs, cfg, weighter.as_ref(), len, rng)?)
            } else {
                None
            };

            encoder.store.zero_grad();
            let mut tape = Tape::new();
            let l_ori = batch_loss(&encoder, &mut tape, &ori, cfg.tau)?;
            let (loss, l_aug_val) = match &aug {
                Some(vb) => {
                    let l_aug = batch_loss(&encoder, &mut tape, vb, cfg.tau)?;
                    let v = tape.value(l_aug).item();
                    (tape.add(l_aug, l_ori)?, v)
                }
                None => (l_ori, 0.0),
            };
            let l_ori_val = tape.value(l_ori).item();
            let l_all = tape.value(loss).item();
            tape.backward(loss, &mut encoder.store)?;
            adam.step(&mut encoder.store);
            history.push(LossRecord { step, epoch, l_aug: l_aug_val, l_ori: l_ori_val, l_all });
            step += 1;
        }
    }
    Ok(PretrainOutput { encoder, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn two_orthogonal_pairs_closed_form() {
        let a = vec![1.0, 0.0];
        let b = vec![0.0, 1.0];
        let batch = EmbeddingBatch::new(vec![a.clone(), a, b.clone(), b], vec![1.0, 1.0]).unwrap();
        let loss = weighted_ntxent(&batch, 0.1).unwrap();
        let expect = (1.0 + 2.0 * (-10f64).exp()).ln();
        assert!((loss - expect).abs() < 1e-12, "{loss} vs {expect}");
        assert!((total_loss(&batch, &batch, 0.1).unwrap() - 2.0 * loss).abs() < 1e-15);
    }

    #[test]
    fn larger_weight_lowers_loss_for_aligned_pair() {
        let e = vec![unit(&[1.0, 0.2]), unit(&[0.9, 0.3]), unit(&[-0.1, 1.0]), unit(&[0.3, 0.8])];
        let lo = weighted_ntxent(&EmbeddingBatch::new(e.clone(), vec![1.0, 1.0]).unwrap(), 0.1).unwrap();
        let hi = weighted_ntxent(&EmbeddingBatch::new(e, vec![1.5, 1.0]).unwrap(), 0.1).unwrap();
        assert!(hi < lo);
    }

    #[test]
    fn batch_validation() {
        let a = vec![1.0, 0.0];
        assert!(EmbeddingBatch::new(vec![a.clone(), a.clone()], vec![1.0]).is_err());
        assert!(EmbeddingBatch::new(vec![a.clone(); 4], vec![1.0]).is_err());
        assert!(EmbeddingBatch::new(vec![vec![2.0, 0.0]; 4], vec![1.0, 1.0]).is_err());
        let b = EmbeddingBatch::new(vec![a; 4], vec![1.0, 1.0]).unwrap();
        assert!(weighted_ntxent(&b, 0.0).is_err());
    }

    #[test]
    fn encoder_outputs_unit_norm_and_is_deterministic() {
        let mut rng = crate::rng::seeded(4);
        let enc = Encoder::new(64, &mut rng).unwrap();
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin()).collect();
        let z = enc.encode_project(&x).unwrap();
        assert_eq!(z.len(), PROJ_DIM);
        let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
        assert_eq!(z, enc.encode_project(&x).unwrap());
        assert!(enc.encode_project(&x[..10]).is_err());
        assert_eq!(enc.embed(&[x.clone(), x]).unwrap()[0].len(), REPR_DIM);
    }
}
