//! Denoising diffusion: variance schedule, closed-form forward noising, the
//! noise-prediction network and its training loss, stochastic reverse steps,
//! and reference-guided generation that injects a reference sample's
//! high/low frequency bands into the reverse trajectory of a source sample.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, ParamStore, Tape, Tensor, Var};
use crate::error::{ClarError, Result};
use crate::nn::Linear;
use crate::rng::NoiseSource;
use crate::signal::{high_pass, low_pass, warp_aggregate};

/// Fixed linear variance schedule over steps `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Betas linearly spaced from `beta_start` to `beta_end` inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(ClarError::invalid("schedule needs at least one step"));
        }
        let ordered = if steps == 1 { beta_start <= beta_end } else { beta_start < beta_end };
        if !(beta_start > 0.0 && beta_end < 1.0 && ordered) {
            return Err(ClarError::invalid(format!(
                "beta bounds must satisfy 0 < start < end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self { steps, betas, alphas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn idx(&self, t: usize) -> usize {
        assert!((1..=self.steps).contains(&t), "step {t} outside 1..={}", self.steps);
        t - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[self.idx(t)]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[self.idx(t)]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[self.idx(t)]
    }

    /// Reverse-process variance; fixed to `beta_t`.
    pub fn sigma_sq(&self, t: usize) -> f64 {
        self.beta(t)
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if !(1..=self.steps).contains(&t) {
            return Err(ClarError::invalid(format!("step {t} outside 1..={}", self.steps)));
        }
        Ok(())
    }
}

/// `sqrt(abar_t) z0 + sqrt(1 - abar_t) eps`.
pub fn forward_sample(z0: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    if z0.len() != eps.len() {
        return Err(ClarError::shape("forward_sample", format!("[{}] vs [{}]", z0.len(), eps.len())));
    }
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(z0.iter().zip(eps).map(|(z, e)| a * z + b * e).collect())
}

/// Sinusoidal embedding of a diffusion step.
pub fn step_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out.push((t as f64 * freq).sin());
    }
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out.push((t as f64 * freq).cos());
    }
    out.resize(dim, 0.0);
    out
}

/// A noise predictor usable by the samplers.
pub trait NoisePredictor {
    fn seq_len(&self) -> usize;
    fn predict(&self, z: &[f64], t: usize) -> Vec<f64>;
    fn is_trained(&self) -> bool {
        true
    }
}

/// A noise predictor that can be differentiated on a tape.
pub trait DifferentiableEps {
    /// `zt: [B, L]`, one step index per row; returns `[B, L]`.
    fn forward(&self, tape: &mut Tape, zt: Var, steps: &[usize]) -> Result<Var>;
}

pub const STEP_EMBED_DIM: usize = 16;
pub const EPS_HIDDEN: usize = 128;

/// Three dense layers over `[z_t, embed(t)]` with tanh activations.
#[derive(Debug, Clone)]
pub struct EpsNet {
    pub store: ParamStore,
    seq_len: usize,
    layers: [Linear; 3],
    trained_steps: u64,
}

impl EpsNet {
    pub fn new<R: Rng + ?Sized>(seq_len: usize, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let l1 = Linear::new(&mut store, "eps.fc1", seq_len + STEP_EMBED_DIM, EPS_HIDDEN, rng);
        let l2 = Linear::new(&mut store, "eps.fc2", EPS_HIDDEN, EPS_HIDDEN, rng);
        let l3 = Linear::new(&mut store, "eps.fc3", EPS_HIDDEN, seq_len, rng);
        Self { store, seq_len, layers: [l1, l2, l3], trained_steps: 0 }
    }

    pub fn trained_steps(&self) -> u64 {
        self.trained_steps
    }

    pub fn set_trained_steps(&mut self, steps: u64) {
        self.trained_steps = steps;
    }

    /// Checkpoint records, including the `meta.seq_len` and `meta.trained_steps` scalars.
    pub fn records(&self) -> Vec<(String, Tensor)> {
        let mut r = self.store.records();
        r.push(("meta.seq_len".into(), Tensor::scalar(self.seq_len as f64)));
        r.push(("meta.trained_steps".into(), Tensor::scalar(self.trained_steps as f64)));
        r
    }

    pub fn from_records(records: &[(String, Tensor)]) -> Result<Self> {
        let scalar = |n: &str| {
            records
                .iter()
                .find(|(k, _)| k == n)
                .map(|(_, t)| t.item())
                .ok_or_else(|| ClarError::Checkpoint(format!("missing `{n}`")))
        };
        let seq_len = scalar("meta.seq_len")? as usize;
        let mut net = Self::new(seq_len, &mut crate::rng::seeded(0));
        net.store.load_records(records)?;
        net.trained_steps = scalar("meta.trained_steps")? as u64;
        Ok(net)
    }
}

impl DifferentiableEps for EpsNet {
    fn forward(&self, tape: &mut Tape, zt: Var, steps: &[usize]) -> Result<Var> {
        let rows: Vec<Vec<f64>> = steps.iter().map(|&t| step_embedding(t, STEP_EMBED_DIM)).collect();
        let emb = tape.input(Tensor::from_rows(&rows));
        let x = tape.concat(&[zt, emb])?;
        let h = self.layers[0].forward(tape, &self.store, x)?;
        let h = tape.tanh(h);
        let h = self.layers[1].forward(tape, &self.store, h)?;
        let h = tape.tanh(h);
        self.layers[2].forward(tape, &self.store, h)
    }
}

impl NoisePredictor for EpsNet {
    fn seq_len(&self) -> usize {
        self.seq_len
    }

    fn predict(&self, z: &[f64], t: usize) -> Vec<f64> {
        let mut x = z.to_vec();
        x.extend(step_embedding(t, STEP_EMBED_DIM));
        let h: Vec<f64> = self.layers[0].infer(&self.store, &x, 1).into_iter().map(f64::tanh).collect();
        let h: Vec<f64> = self.layers[1].infer(&self.store, &h, 1).into_iter().map(f64::tanh).collect();
        self.layers[2].infer(&self.store, &h, 1)
    }

    fn is_trained(&self) -> bool {
        self.trained_steps > 0
    }
}

/// Noised inputs and targets for one loss evaluation.
#[derive(Debug, Clone)]
pub struct DdpmBatch {
    pub steps: Vec<usize>,
    /// `[B, L]` injected noise.
    pub eps: Tensor,
    /// `[B, L]` noised inputs.
    pub zt: Tensor,
}

/// Draws `t ~ U{1..T}` and `eps ~ N(0, I)` per item and forms `z^t`.
pub fn draw_ddpm_batch<R: Rng + ?Sized>(z0: &[&[f64]], sched: &NoiseSchedule, rng: &mut R) -> Result<DdpmBatch> {
    let Some(first) = z0.first() else {
        return Err(ClarError::invalid("empty DDPM batch"));
    };
    let l = first.len();
    let mut steps = Vec::with_capacity(z0.len());
    let mut eps_rows = Vec::with_capacity(z0.len());
    let mut zt_rows = Vec::with_capacity(z0.len());
    for z in z0 {
        if z.len() != l {
            return Err(ClarError::shape("ddpm_train_loss", format!("[{l}] vs [{}]", z.len())));
        }
        let t = rng.random_range(1..=sched.steps());
        let eps = crate::rng::normal_vec(rng, l);
        zt_rows.push(forward_sample(z, t, &eps, sched)?);
        eps_rows.push(eps);
        steps.push(t);
    }
    Ok(DdpmBatch { steps, eps: Tensor::from_rows(&eps_rows), zt: Tensor::from_rows(&zt_rows) })
}

/// Mean squared error between injected and predicted noise.
pub fn ddpm_loss<N: DifferentiableEps + ?Sized>(net: &N, tape: &mut Tape, batch: &DdpmBatch) -> Result<Var> {
    let zt = tape.input(batch.zt.clone());
    let pred = net.forward(tape, zt, &batch.steps)?;
    let target = tape.input(batch.eps.clone());
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean(sq))
}

/// Draws a batch and records its loss on `tape`.
pub fn ddpm_train_loss<N: DifferentiableEps + ?Sized, R: Rng + ?Sized>(
    net: &N,
    tape: &mut Tape,
    z0: &[&[f64]],
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Var> {
    let batch = draw_ddpm_batch(z0, sched, rng)?;
    ddpm_loss(net, tape, &batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpmTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for DdpmTrainConfig {
    fn default() -> Self {
        Self { steps: 3000, batch: 50, lr: 1e-3 }
    }
}

/// Trains `net` on `data` for `cfg.steps` Adam steps, continuing from
/// `adam` when resuming. Returns the per-step losses.
pub fn train_ddpm<R: Rng + ?Sized>(
    net: &mut EpsNet,
    adam: &mut Adam,
    data: &[Vec<f64>],
    sched: &NoiseSchedule,
    cfg: &DdpmTrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(ClarError::invalid("no training sequences"));
    }
    if cfg.batch == 0 {
        return Err(ClarError::invalid("batch size must be positive"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut history = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch);
        while batch.len() < cfg.batch {
            if cursor == order.len() {
                order.shuffle(rng);
                cursor = 0;
            }
            batch.push(data[order[cursor]].as_slice());
            cursor += 1;
        }
        net.store.zero_grad();
        let mut tape = Tape::new();
        let loss = ddpm_train_loss(net, &mut tape, &batch, sched, rng)?;
        history.push(tape.value(loss).item());
        tape.backward(loss, &mut net.store)?;
        adam.step(&mut net.store);
        net.trained_steps += 1;
    }
    Ok(history)
}

/// Fresh Adam state for a noise predictor.
pub fn ddpm_optimizer(lr: f64) -> Result<Adam> {
    Adam::new(AdamConfig::with_lr(lr))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub z: Vec<f64>,
    pub t: usize,
}

/// One reverse transition `t -> t-1`. No noise is added at `t == 1`.
pub fn reverse_step<P, N>(state: &LatentState, net: &P, sched: &NoiseSchedule, noise: &mut N) -> Result<LatentState>
where
    P: NoisePredictor + ?Sized,
    N: NoiseSource + ?Sized,
{
    let t = state.t;
    if t == 0 {
        return Err(ClarError::invalid("reverse step from t = 0"));
    }
    sched.check_step(t)?;
    let eps_hat = net.predict(&state.z, t);
    if eps_hat.len() != state.z.len() {
        return Err(ClarError::shape("reverse_step", format!("[{}] vs [{}]", state.z.len(), eps_hat.len())));
    }
    let alpha = sched.alpha(t);
    let coef = (1.0 - alpha) / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let mut z: Vec<f64> = state.z.iter().zip(&eps_hat).map(|(z, e)| inv_sqrt_alpha * (z - coef * e)).collect();
    if t > 1 {
        let s = sched.sigma_sq(t);
        for (zi, e) in z.iter_mut().zip(noise.normal(state.z.len())) {
            *zi += s * e;
        }
    }
    Ok(LatentState { z, t: t - 1 })
}

/// Runs the reverse chain from `prior` at step `T` down to step 0.
pub fn sample_from_prior<P, N>(prior: Vec<f64>, net: &P, sched: &NoiseSchedule, noise: &mut N) -> Result<Vec<f64>>
where
    P: NoisePredictor + ?Sized,
    N: NoiseSource + ?Sized,
{
    let mut state = LatentState { z: prior, t: sched.steps() };
    while state.t > 0 {
        state = reverse_step(&state, net, sched, noise)?;
    }
    Ok(state.z)
}

/// Unconditional generation from the noised source `z^T = q(z^T | z_src)`.
pub fn sample_unconditional<P, N>(z_src: &[f64], net: &P, sched: &NoiseSchedule, noise: &mut N) -> Result<Vec<f64>>
where
    P: NoisePredictor + ?Sized,
    N: NoiseSource + ?Sized,
{
    let prior = forward_sample(z_src, sched.steps(), &noise.normal(z_src.len()), sched)?;
    sample_from_prior(prior, net, sched, noise)
}

/// Exponential band weights. A zero `n_*` disables that band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceConfig {
    pub lambda_h: f64,
    pub lambda_l: f64,
    pub n_h: f64,
    pub n_l: f64,
}

impl GuidanceConfig {
    /// `lambda = 5 / T`, `N = 1` for both bands.
    pub fn for_steps(steps: usize) -> Self {
        let lambda = 5.0 / steps as f64;
        Self { lambda_h: lambda, lambda_l: lambda, n_h: 1.0, n_l: 1.0 }
    }

    pub fn disabled(steps: usize) -> Self {
        Self { n_h: 0.0, n_l: 0.0, ..Self::for_steps(steps) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_h > 0.0 && self.lambda_l > 0.0) {
            return Err(ClarError::invalid("guidance decay/growth constants must be > 0"));
        }
        if !((0.0..=1.0).contains(&self.n_h) && (0.0..=1.0).contains(&self.n_l)) {
            return Err(ClarError::invalid("guidance initial quantities must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// `(Omega_h(t-1), Omega_l(t-1))` for reverse step `t`.
pub fn guidance_weights(t: usize, cfg: &GuidanceConfig, steps: usize) -> Result<(f64, f64)> {
    if !(1..=steps).contains(&t) {
        return Err(ClarError::invalid(format!("step {t} outside 1..={steps}")));
    }
    let h = cfg.n_h * (-cfg.lambda_h * (t - 1) as f64).exp();
    let l = cfg.n_l * (-cfg.lambda_l * (steps - t) as f64).exp();
    Ok((h, l))
}

fn band_at<N: NoiseSource + ?Sized>(band: &[f64], t: usize, sched: &NoiseSchedule, noise: &mut N) -> Result<Vec<f64>> {
    if t == 0 {
        Ok(band.to_vec())
    } else {
        forward_sample(band, t, &noise.normal(band.len()), sched)
    }
}

/// `Omega * (f(sigma(zhat, band_t)) - f(zhat))`, added into `z`.
fn inject(z: &mut [f64], zhat: &[f64], band_t: &[f64], omega: f64, filter: fn(&[f64]) -> Result<Vec<f64>>) -> Result<()> {
    let merged = filter(&warp_aggregate(zhat, band_t)?)?;
    let own = filter(zhat)?;
    for ((zi, m), o) in z.iter_mut().zip(merged).zip(own) {
        *zi += omega * (m - o);
    }
    Ok(())
}

/// Generates a sample that starts from the noised source and is steered
/// toward the reference's high and low frequency bands at every reverse step.
pub fn conditioned_generate<P, N>(
    z_src: &[f64],
    z_ref: &[f64],
    net: &P,
    sched: &NoiseSchedule,
    cfg: &GuidanceConfig,
    noise: &mut N,
) -> Result<Vec<f64>>
where
    P: NoisePredictor + ?Sized,
    N: NoiseSource + ?Sized,
{
    if z_src.len() != z_ref.len() {
        return Err(ClarError::shape("conditioned_generate", format!("[{}] vs [{}]", z_src.len(), z_ref.len())));
    }
    if net.seq_len() != z_src.len() {
        return Err(ClarError::shape(
            "conditioned_generate",
            format!("network expects [{}], got [{}]", net.seq_len(), z_src.len()),
        ));
    }
    if !net.is_trained() {
        return Err(ClarError::MissingArtifact("noise predictor has not been trained".into()));
    }
    cfg.validate()?;
    let steps = sched.steps();
    let bands = crate::signal::haar_analysis(z_ref)?;
    let mut z = forward_sample(z_src, steps, &noise.normal(z_src.len()), sched)?;
    for t in (1..=steps).rev() {
        let zhat = reverse_step(&LatentState { z, t }, net, sched, noise)?.z;
        let (omega_h, omega_l) = guidance_weights(t, cfg, steps)?;
        let mut next = zhat.clone();
        if omega_h != 0.0 {
            let zh = band_at(&bands.high, t - 1, sched, noise)?;
            inject(&mut next, &zhat, &zh, omega_h, high_pass)?;
        }
        if omega_l != 0.0 {
            let zl = band_at(&bands.low, t - 1, sched, noise)?;
            inject(&mut next, &zhat, &zl, omega_l, low_pass)?;
        }
        z = next;
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::ZeroNoise;

    struct ZeroNet(usize);

    impl NoisePredictor for ZeroNet {
        fn seq_len(&self) -> usize {
            self.0
        }
        fn predict(&self, z: &[f64], _t: usize) -> Vec<f64> {
            vec![0.0; z.len()]
        }
    }

    /// Returns a fixed noise vector regardless of input.
    struct FixedNet(Vec<f64>);

    impl NoisePredictor for FixedNet {
        fn seq_len(&self) -> usize {
            self.0.len()
        }
        fn predict(&self, _z: &[f64], _t: usize) -> Vec<f64> {
            self.0.clone()
        }
    }

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 0.01, 0.01).unwrap();
        assert_eq!(s.alpha_bar(1), 1.0 - 0.01);
        assert!(NoiseSchedule::linear(0, 0.01, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.02, 0.01).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.01).is_err());
        assert!(NoiseSchedule::linear(10, 0.01, 1.0).is_err());
    }

    #[test]
    fn betas_strictly_increase_and_alpha_bar_small() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        assert!(s.betas().windows(2).all(|w| w[1] > w[0]));
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar(1000) < 0.01);
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(1000) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn forward_sample_degenerate_cases() {
        let s = NoiseSchedule::linear(10, 1e-3, 0.1).unwrap();
        let z0 = [1.0, -2.0, 0.5];
        let ab = s.alpha_bar(4);
        let y = forward_sample(&z0, 4, &[0.0; 3], &s).unwrap();
        assert_eq!(y, z0.iter().map(|z| ab.sqrt() * z).collect::<Vec<_>>());
        let e = [0.3, 0.1, -1.0];
        let y = forward_sample(&[0.0; 3], 4, &e, &s).unwrap();
        assert_eq!(y, e.iter().map(|v| (1.0 - ab).sqrt() * v).collect::<Vec<_>>());
        assert!(forward_sample(&z0, 0, &e, &s).is_err());
        assert!(forward_sample(&z0, 11, &e, &s).is_err());
        assert!(forward_sample(&z0, 1, &[0.0; 2], &s).is_err());
    }

    #[test]
    fn reverse_step_collapses_with_zero_net_and_noise() {
        let s = NoiseSchedule::linear(10, 1e-3, 0.1).unwrap();
        let z = vec![0.5, -1.5, 2.0];
        let out = reverse_step(&LatentState { z: z.clone(), t: 7 }, &ZeroNet(3), &s, &mut ZeroNoise).unwrap();
        assert_eq!(out.t, 6);
        assert_eq!(out.z, z.iter().map(|v| v / s.alpha(7).sqrt()).collect::<Vec<_>>());
        assert!(reverse_step(&LatentState { z, t: 0 }, &ZeroNet(3), &s, &mut ZeroNoise).is_err());
    }

    #[test]
    fn one_step_round_trip_inverts_forward() {
        let s = NoiseSchedule::linear(10, 1e-3, 0.1).unwrap();
        let z0 = vec![0.25, -0.75, 1.5, 0.0];
        let eps = vec![0.4, -1.1, 0.2, 0.9];
        let z1 = forward_sample(&z0, 1, &eps, &s).unwrap();
        // t = 1 never draws noise, so any source works.
        let mut rng = crate::rng::seeded(1);
        let back = reverse_step(&LatentState { z: z1, t: 1 }, &FixedNet(eps), &s, &mut rng).unwrap();
        for (a, b) in back.z.iter().zip(&z0) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn guidance_endpoints() {
        let cfg = GuidanceConfig { lambda_h: 0.1, lambda_l: 0.2, n_h: 0.8, n_l: 0.6 };
        assert_eq!(guidance_weights(1, &cfg, 50).unwrap().0, 0.8);
        assert_eq!(guidance_weights(50, &cfg, 50).unwrap().1, 0.6);
        assert!(guidance_weights(0, &cfg, 50).is_err());
        assert!(guidance_weights(51, &cfg, 50).is_err());
    }

    #[test]
    fn step_embedding_shape() {
        let e = step_embedding(0, 16);
        assert_eq!(e.len(), 16);
        assert_eq!(&e[..8], &[0.0; 8]);
        assert_eq!(&e[8..], &[1.0; 8]);
    }

    #[test]
    fn conditioned_generate_rejects_bad_inputs() {
        let s = NoiseSchedule::linear(5, 1e-3, 0.1).unwrap();
        let cfg = GuidanceConfig::for_steps(5);
        let mut rng = crate::rng::seeded(0);
        assert!(conditioned_generate(&[0.0; 4], &[0.0; 3], &ZeroNet(4), &s, &cfg, &mut rng).is_err());
        let untrained = EpsNet::new(4, &mut rng);
        let err = conditioned_generate(&[0.0; 4], &[0.0; 4], &untrained, &s, &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, ClarError::MissingArtifact(_)));
    }

    #[test]
    fn conditioned_output_has_source_length() {
        let s = NoiseSchedule::linear(8, 1e-3, 0.1).unwrap();
        let cfg = GuidanceConfig::for_steps(8);
        let mut rng = crate::rng::seeded(2);
        let out = conditioned_generate(&[0.1; 12], &[0.4; 12], &ZeroNet(12), &s, &cfg, &mut rng).unwrap();
        assert_eq!(out.len(), 12);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn eps_net_checkpoint_records_round_trip() {
        let mut rng = crate::rng::seeded(5);
        let mut net = EpsNet::new(6, &mut rng);
        net.set_trained_steps(17);
        let back = EpsNet::from_records(&net.records()).unwrap();
        assert_eq!(back.trained_steps(), 17);
        assert_eq!(back.store, net.store);
        let z = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        assert_eq!(back.predict(&z, 3), net.predict(&z, 3));
    }
}
