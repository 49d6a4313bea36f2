//! Config-driven stages behind the `clar` binary.
//!
//! Every stage reads a [`RunConfig`], loads the artifacts it needs from the
//! configured paths and writes its own outputs. All randomness is derived
//! from the master seed through named streams (`data`, `ddpm`, `pretrain`,
//! `probe`), so a stage rerun with the same config reproduces its files
//! byte for byte.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autodiff::{read_checkpoint, write_checkpoint, Adam, AdamConfig, Tensor};
use crate::classifier::{compute_metrics, fit_probe, LinearProbe, Metrics, ProbeConfig};
use crate::contrastive::{build_aug_bank, pretrain, Augmenter, Encoder, PretrainConfig, PretrainData, PretrainOutput};
use crate::data::{
    class_dtw_means, corpus_references, load_corpus, save_corpus, save_sidecar, synth_generate, Corpus, CorpusSpec,
    ReferenceTable,
};
use crate::diffusion::{
    conditioned_generate, train_ddpm, DdpmTrainConfig, EpsNet, GuidanceConfig, NoisePredictor, NoiseSchedule,
};
use crate::error::{ClarError, Result};
use crate::rng::substream;
use crate::signal::dtw_distance;

pub const SEED_ENV: &str = "CLAR_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSettings {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSettings {
    fn default() -> Self {
        Self { steps: 1000, beta_start: 1e-4, beta_end: 0.02 }
    }
}

impl ScheduleSettings {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

/// Guidance constants; a missing `lambda_*` defaults to `5 / T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceSettings {
    pub lambda_h: Option<f64>,
    pub lambda_l: Option<f64>,
    pub n_h: f64,
    pub n_l: f64,
}

impl Default for GuidanceSettings {
    fn default() -> Self {
        Self { lambda_h: None, lambda_l: None, n_h: 1.0, n_l: 1.0 }
    }
}

impl GuidanceSettings {
    pub fn resolve(&self, steps: usize) -> Result<GuidanceConfig> {
        let base = GuidanceConfig::for_steps(steps);
        let cfg = GuidanceConfig {
            lambda_h: self.lambda_h.unwrap_or(base.lambda_h),
            lambda_l: self.lambda_l.unwrap_or(base.lambda_l),
            n_h: self.n_h,
            n_l: self.n_l,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSettings {
    /// Samples written by `augment`.
    pub count: usize,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        Self { count: 50 }
    }
}

/// The four variants compared by the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arm {
    Base,
    Aug,
    Weight,
    Full,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Base, Arm::Aug, Arm::Weight, Arm::Full];

    pub fn uses_augmentation(self) -> bool {
        matches!(self, Arm::Aug | Arm::Full)
    }

    pub fn uses_weighting(self) -> bool {
        matches!(self, Arm::Weight | Arm::Full)
    }

    pub fn name(self) -> &'static str {
        match self {
            Arm::Base => "Base",
            Arm::Aug => "Aug",
            Arm::Weight => "Weight",
            Arm::Full => "Full",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSettings {
    /// Seeds `seed, seed + 1, ...` are run for every arm.
    pub num_seeds: u64,
    pub arms: Vec<Arm>,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self { num_seeds: 3, arms: Arm::ALL.to_vec() }
    }
}

/// Optional per-artifact locations; unset entries live in `out_dir`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub ddpm: Option<PathBuf>,
    pub ddpm_loss: Option<PathBuf>,
    pub augmented: Option<PathBuf>,
    pub augment_summary: Option<PathBuf>,
    pub encoder: Option<PathBuf>,
    pub pretrain_loss: Option<PathBuf>,
    pub probe: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub ablation: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Corpus settings. `data.seed` is replaced by the master seed.
    pub data: CorpusSpec,
    pub schedule: ScheduleSettings,
    pub guidance: GuidanceSettings,
    pub ddpm: DdpmTrainConfig,
    /// Reference candidates kept per training item.
    pub references: usize,
    pub augment: AugmentSettings,
    pub pretrain: PretrainConfig,
    pub probe: ProbeConfig,
    pub ablation: AblationSettings,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("clar-out"),
            data: CorpusSpec::default(),
            schedule: ScheduleSettings::default(),
            guidance: GuidanceSettings::default(),
            ddpm: DdpmTrainConfig::default(),
            references: 10,
            augment: AugmentSettings::default(),
            pretrain: PretrainConfig::default(),
            probe: ProbeConfig::default(),
            ablation: AblationSettings::default(),
            paths: Paths::default(),
        }
    }
}

/// Sets `path` (dot separated) inside a JSON object tree, creating
/// intermediate objects.
fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(ClarError::Config(format!("bad override key `{path}`")));
    }
    for (i, key) in keys.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| ClarError::Config(format!("`{}` is not an object", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            obj.insert((*key).to_string(), value);
            return Ok(());
        }
        cur = obj.entry(*key).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Parses an override value: JSON when it parses, a plain string otherwise.
pub fn override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl RunConfig {
    /// Builds a config from an optional JSON file, then `overrides`
    /// (dotted key, value), then the seed variable `env_seed`, and validates it.
    pub fn load(file: Option<&Path>, overrides: &[(String, Value)], env_seed: Option<&str>) -> Result<Self> {
        let mut root = match file {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| ClarError::Config(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| ClarError::Config(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        if !root.is_object() {
            return Err(ClarError::Config("config root must be a JSON object".into()));
        }
        for (k, v) in overrides {
            set_path(&mut root, k, v.clone())?;
        }
        let mut cfg: RunConfig = serde_json::from_value(root).map_err(|e| ClarError::Config(e.to_string()))?;
        if let Some(s) = env_seed {
            cfg.seed = s
                .trim()
                .parse()
                .map_err(|_| ClarError::Config(format!("{SEED_ENV}=`{s}` is not an unsigned integer")))?;
        }
        cfg.data.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: ClarError| match e {
            ClarError::InvalidArgument(m) => ClarError::Config(m),
            other => other,
        };
        self.data.validate().map_err(wrap)?;
        let sched = self.schedule.build().map_err(wrap)?;
        self.guidance.resolve(sched.steps()).map_err(wrap)?;
        if self.ddpm.batch == 0 || !(self.ddpm.lr > 0.0) {
            return Err(ClarError::Config("ddpm batch must be >= 1 and lr > 0".into()));
        }
        if self.references == 0 {
            return Err(ClarError::Config("references must be >= 1".into()));
        }
        self.pretrain.validate().map_err(wrap)?;
        if self.pretrain.use_augmentation && self.pretrain.aug_bank == 1 {
            return Err(ClarError::Config("aug_bank must be 0 or at least 2".into()));
        }
        if !(self.probe.lr > 0.0) {
            return Err(ClarError::Config("probe lr must be > 0".into()));
        }
        if self.ablation.num_seeds == 0 || self.ablation.arms.is_empty() {
            return Err(ClarError::Config("ablation needs at least one seed and one arm".into()));
        }
        Ok(())
    }

    fn path(&self, set: &Option<PathBuf>, default: &str) -> PathBuf {
        set.clone().unwrap_or_else(|| self.out_dir.join(default))
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.path(&self.paths.corpus, "corpus.csv")
    }
    pub fn ddpm_path(&self) -> PathBuf {
        self.path(&self.paths.ddpm, "ddpm.ckpt")
    }
    pub fn ddpm_loss_path(&self) -> PathBuf {
        self.path(&self.paths.ddpm_loss, "ddpm_loss.csv")
    }
    pub fn augmented_path(&self) -> PathBuf {
        self.path(&self.paths.augmented, "augmented.csv")
    }
    pub fn augment_summary_path(&self) -> PathBuf {
        self.path(&self.paths.augment_summary, "augment_summary.json")
    }
    pub fn encoder_path(&self) -> PathBuf {
        self.path(&self.paths.encoder, "encoder.ckpt")
    }
    pub fn pretrain_loss_path(&self) -> PathBuf {
        self.path(&self.paths.pretrain_loss, "pretrain_loss.csv")
    }
    pub fn probe_path(&self) -> PathBuf {
        self.path(&self.paths.probe, "probe.ckpt")
    }
    pub fn metrics_path(&self) -> PathBuf {
        self.path(&self.paths.metrics, "metrics.json")
    }
    pub fn ablation_path(&self) -> PathBuf {
        self.path(&self.paths.ablation, "ablation.csv")
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    create_parent(path)?;
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn missing(what: &str, path: &Path, hint: &str) -> ClarError {
    ClarError::MissingArtifact(format!("{what} not found at {} ({hint})", path.display()))
}

fn load_records(path: &Path, what: &str, hint: &str) -> Result<Vec<(String, Tensor)>> {
    let file = fs::File::open(path).map_err(|_| missing(what, path, hint))?;
    read_checkpoint(std::io::BufReader::new(file))
}

fn save_records(path: &Path, records: &[(String, Tensor)]) -> Result<()> {
    let mut w = create_file(path)?;
    write_checkpoint(&mut w, records)?;
    w.flush()?;
    Ok(())
}

pub fn load_run_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let path = cfg.corpus_path();
    if !path.exists() {
        return Err(missing("corpus", &path, "run `clar gen-data` first"));
    }
    load_corpus(&path)
}

/// Generates the synthetic corpus and writes the CSV plus its sidecar.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<Corpus> {
    let spec = CorpusSpec { seed: cfg.seed, ..cfg.data };
    let corpus = synth_generate(&spec)?;
    let path = cfg.corpus_path();
    save_corpus(&path, &corpus)?;
    save_sidecar(&path, &spec)?;
    Ok(corpus)
}

fn train_values(corpus: &Corpus) -> Vec<Vec<f64>> {
    corpus.train().iter().map(|s| s.values.clone()).collect()
}

const SCHEDULE_RECORD: &str = "meta.schedule";

/// A trained noise predictor together with the schedule it was trained on.
#[derive(Debug, Clone)]
pub struct DdpmArtifact {
    pub net: EpsNet,
    pub schedule: ScheduleSettings,
}

impl DdpmArtifact {
    fn records(&self, adam: &Adam) -> Vec<(String, Tensor)> {
        let mut r = self.net.records();
        let s = &self.schedule;
        r.push((SCHEDULE_RECORD.into(), Tensor::vector(vec![s.steps as f64, s.beta_start, s.beta_end])));
        r.extend(adam.state_records(&self.net.store));
        r
    }

    fn from_records(records: &[(String, Tensor)]) -> Result<Self> {
        let net = EpsNet::from_records(records)?;
        let meta = records
            .iter()
            .find(|(k, _)| k == SCHEDULE_RECORD)
            .map(|(_, t)| t.data().to_vec())
            .ok_or_else(|| ClarError::Checkpoint(format!("missing `{SCHEDULE_RECORD}`")))?;
        if meta.len() != 3 {
            return Err(ClarError::Checkpoint(format!("`{SCHEDULE_RECORD}` must hold 3 values")));
        }
        let schedule = ScheduleSettings { steps: meta[0] as usize, beta_start: meta[1], beta_end: meta[2] };
        Ok(Self { net, schedule })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_records(&load_records(path, "noise predictor checkpoint", "run `clar train-ddpm` first")?)
    }
}

/// Trains (or, with `resume`, continues training) the noise predictor.
/// Returns the losses of the steps run by this call.
pub fn cmd_train_ddpm(cfg: &RunConfig, resume: bool) -> Result<Vec<f64>> {
    let corpus = load_run_corpus(cfg)?;
    let data = train_values(&corpus);
    let ckpt = cfg.ddpm_path();
    let (mut art, mut adam, mut rng) = if resume {
        let records = load_records(&ckpt, "noise predictor checkpoint", "nothing to resume")?;
        let art = DdpmArtifact::from_records(&records)?;
        if art.schedule != cfg.schedule {
            return Err(ClarError::Config(format!(
                "checkpoint was trained with schedule {:?}, config asks for {:?}",
                art.schedule, cfg.schedule
            )));
        }
        if art.net.seq_len() != corpus.seq_len() {
            return Err(ClarError::Checkpoint("checkpoint sequence length does not match the corpus".into()));
        }
        let mut adam = Adam::new(AdamConfig::with_lr(cfg.ddpm.lr))?;
        adam.load_state(&art.net.store, &records)?;
        let rng = substream(cfg.seed, &format!("ddpm.resume.{}", art.net.trained_steps()));
        (art, adam, rng)
    } else {
        let mut rng = substream(cfg.seed, "ddpm");
        let net = EpsNet::new(corpus.seq_len(), &mut rng);
        (DdpmArtifact { net, schedule: cfg.schedule }, Adam::new(AdamConfig::with_lr(cfg.ddpm.lr))?, rng)
    };
    let sched = cfg.schedule.build()?;
    let first = art.net.trained_steps();
    let losses = train_ddpm(&mut art.net, &mut adam, &data, &sched, &cfg.ddpm, &mut rng)?;
    save_records(&ckpt, &art.records(&adam))?;

    let loss_path = cfg.ddpm_loss_path();
    let mut w = if resume && loss_path.exists() {
        BufWriter::new(fs::OpenOptions::new().append(true).open(&loss_path)?)
    } else {
        let mut w = create_file(&loss_path)?;
        writeln!(w, "step,loss")?;
        w
    };
    for (k, l) in losses.iter().enumerate() {
        writeln!(w, "{},{l}", first + k as u64)?;
    }
    w.flush()?;
    Ok(losses)
}

/// Summary written next to the augmented samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub count: usize,
    pub diffusion_steps: usize,
    pub guidance: GuidanceConfig,
    pub mean_dtw_aug_src: f64,
    pub mean_dtw_aug_ref: f64,
    pub mean_within_class_dtw: f64,
    pub mean_cross_class_dtw: f64,
}

fn references(cfg: &RunConfig, corpus: &Corpus) -> Result<ReferenceTable> {
    corpus_references(corpus, cfg.references)
}

/// Generates `n` augmented samples, cycling through the training items as
/// sources, and reports their DTW distance to sources and references.
pub fn cmd_augment(cfg: &RunConfig, n: usize) -> Result<AugmentSummary> {
    if n == 0 {
        return Err(ClarError::Config("augment needs n >= 1".into()));
    }
    let corpus = load_run_corpus(cfg)?;
    let art = DdpmArtifact::load(&cfg.ddpm_path())?;
    let sched = art.schedule.build()?;
    let guidance = cfg.guidance.resolve(sched.steps())?;
    let train = corpus.train();
    let refs = references(cfg, &corpus)?;
    let mut rng = substream(cfg.seed, "ddpm.augment");

    let mut w = create_file(&cfg.augmented_path())?;
    let mut header = String::from("aug_id,source_id,reference_id,class");
    for t in 0..corpus.seq_len() {
        header.push_str(&format!(",t{t}"));
    }
    writeln!(w, "{header}")?;
    let (mut d_src, mut d_ref) = (0.0, 0.0);
    for k in 0..n {
        let i = k % train.len();
        let r = refs.draw(i, &mut rng)?;
        let (src, rf) = (train[i], train[r]);
        let out = conditioned_generate(&src.values, &rf.values, &art.net, &sched, &guidance, &mut rng)?;
        d_src += dtw_distance(&out, &src.values)?;
        d_ref += dtw_distance(&out, &rf.values)?;
        let mut line = format!("{k},{},{},{}", src.id, rf.id, src.class);
        for v in &out {
            line.push_str(&format!(",{v:.16e}"));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;

    let seqs: Vec<&[f64]> = train.iter().map(|s| s.values.as_slice()).collect();
    let classes: Vec<usize> = train.iter().map(|s| s.class).collect();
    let stats = class_dtw_means(&seqs, &classes)?;
    let summary = AugmentSummary {
        count: n,
        diffusion_steps: sched.steps(),
        guidance,
        mean_dtw_aug_src: d_src / n as f64,
        mean_dtw_aug_ref: d_ref / n as f64,
        mean_within_class_dtw: stats.within,
        mean_cross_class_dtw: stats.cross,
    };
    write_json(&cfg.augment_summary_path(), &summary)?;
    Ok(summary)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create_file(path)?;
    writeln!(w, "{}", serde_json::to_string_pretty(value)?)?;
    w.flush()?;
    Ok(())
}

/// Pretrains one encoder with stream `seed`. `ddpm` is only consulted when
/// `pcfg.use_augmentation` is set.
pub fn pretrain_with_seed(
    corpus: &Corpus,
    refs: &ReferenceTable,
    ddpm: Option<(&DdpmArtifact, &GuidanceSettings)>,
    pcfg: &PretrainConfig,
    seed: u64,
    bank: Option<&[Vec<Vec<f64>>]>,
) -> Result<PretrainOutput> {
    let train = train_values(corpus);
    let data = PretrainData { train: &train, references: refs, static_pool: &corpus.static_pool };
    let mut rng = substream(seed, "pretrain");
    if !pcfg.use_augmentation {
        return pretrain(&data, None, None, pcfg, &mut rng);
    }
    let (art, gs) = ddpm.ok_or_else(|| {
        ClarError::MissingArtifact("augmentation is enabled but no noise predictor was supplied".into())
    })?;
    let sched = art.schedule.build()?;
    let guidance = gs.resolve(sched.steps())?;
    let augmenter = Augmenter { net: &art.net, schedule: &sched, guidance: &guidance };
    match bank {
        Some(b) => pretrain(&data, None, Some(b), pcfg, &mut rng),
        None if pcfg.aug_bank >= 2 => {
            let b = build_aug_bank(&data, &augmenter, pcfg.aug_bank, &mut substream(seed, "pretrain.augment"))?;
            pretrain(&data, None, Some(&b), pcfg, &mut rng)
        }
        None => pretrain(&data, Some(&augmenter), None, pcfg, &mut rng),
    }
}

fn write_loss_csv(path: &Path, out: &PretrainOutput) -> Result<()> {
    let mut w = create_file(path)?;
    writeln!(w, "step,L_aug,L_ori,L_all")?;
    for r in &out.history {
        writeln!(w, "{},{},{},{}", r.step, r.l_aug, r.l_ori, r.l_all)?;
    }
    w.flush()?;
    Ok(())
}

/// Contrastive pretraining; writes the encoder checkpoint and loss CSV.
pub fn cmd_pretrain(cfg: &RunConfig) -> Result<PretrainOutput> {
    let corpus = load_run_corpus(cfg)?;
    let refs = references(cfg, &corpus)?;
    let art = if cfg.pretrain.use_augmentation {
        Some(DdpmArtifact::load(&cfg.ddpm_path())?)
    } else {
        None
    };
    let out = pretrain_with_seed(&corpus, &refs, art.as_ref().map(|a| (a, &cfg.guidance)), &cfg.pretrain, cfg.seed, None)?;
    save_records(&cfg.encoder_path(), &out.encoder.records())?;
    write_loss_csv(&cfg.pretrain_loss_path(), &out)?;
    Ok(out)
}

fn load_encoder(cfg: &RunConfig) -> Result<Encoder> {
    Encoder::from_records(&load_records(&cfg.encoder_path(), "encoder checkpoint", "run `clar pretrain` first")?)
}

/// Fits a probe on the labeled training items with stream `seed`.
pub fn finetune_with_seed(corpus: &Corpus, encoder: &Encoder, pcfg: &ProbeConfig, seed: u64) -> Result<LinearProbe> {
    let labeled = corpus.labeled();
    if labeled.is_empty() {
        return Err(ClarError::invalid("the corpus has no labeled training items"));
    }
    let xs: Vec<&[f64]> = labeled.iter().map(|s| s.values.as_slice()).collect();
    let ys: Vec<usize> = labeled.iter().map(|s| s.class).collect();
    let emb = encoder.embed(&xs)?;
    fit_probe(&emb, &ys, corpus.num_classes(), pcfg, &mut substream(seed, "probe"))
}

/// Trains the linear probe on frozen representations of the labeled items.
pub fn cmd_finetune(cfg: &RunConfig) -> Result<LinearProbe> {
    let corpus = load_run_corpus(cfg)?;
    let encoder = load_encoder(cfg)?;
    let probe = finetune_with_seed(&corpus, &encoder, &cfg.probe, cfg.seed)?;
    save_records(&cfg.probe_path(), &probe.records())?;
    Ok(probe)
}

/// Scores `probe` on the test split.
pub fn evaluate_on_test(corpus: &Corpus, encoder: &Encoder, probe: &LinearProbe) -> Result<Metrics> {
    let test = corpus.test();
    if test.is_empty() {
        return Err(ClarError::invalid("the corpus has no test items"));
    }
    let xs: Vec<&[f64]> = test.iter().map(|s| s.values.as_slice()).collect();
    let ys: Vec<usize> = test.iter().map(|s| s.class).collect();
    let pred = probe.predict(&encoder.embed(&xs)?)?;
    compute_metrics(&ys, &pred, corpus.num_classes().max(probe.num_classes()))
}

/// Evaluates the saved encoder and probe; writes the metrics JSON.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Metrics> {
    let corpus = load_run_corpus(cfg)?;
    let encoder = load_encoder(cfg)?;
    let probe = LinearProbe::from_records(&load_records(&cfg.probe_path(), "probe checkpoint", "run `clar finetune` first")?)?;
    let metrics = evaluate_on_test(&corpus, &encoder, &probe)?;
    write_json(&cfg.metrics_path(), &metrics)?;
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub arm: Arm,
    /// `None` marks the per-arm mean row.
    pub seed: Option<u64>,
    pub accuracy: f64,
    pub macro_f1: f64,
}

impl AblationRow {
    pub fn csv_line(&self) -> String {
        let seed = self.seed.map_or_else(|| "mean".to_string(), |s| s.to_string());
        format!("{},{seed},{:.6},{:.6}", self.arm, self.accuracy, self.macro_f1)
    }
}

pub const ABLATION_HEADER: &str = "arm,seed,accuracy,macro_f1";

/// Runs every configured arm for every seed on the same corpus and writes
/// the ablation CSV: one row per (arm, seed), then one mean row per arm.
/// The noise predictor is only loaded when an arm needs it.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    let corpus = load_run_corpus(cfg)?;
    let refs = references(cfg, &corpus)?;
    let arms = &cfg.ablation.arms;
    let art = match arms.iter().find(|a| a.uses_augmentation()) {
        Some(arm) => {
            let path = cfg.ddpm_path();
            if !path.exists() {
                return Err(ClarError::MissingArtifact(format!(
                    "arm {arm} needs the noise predictor checkpoint at {} (run `clar train-ddpm` first)",
                    path.display()
                )));
            }
            Some(DdpmArtifact::load(&path)?)
        }
        None => None,
    };
    let mut rows = Vec::new();
    for k in 0..cfg.ablation.num_seeds {
        let seed = cfg.seed.wrapping_add(k);
        // Aug and Full share one bank per seed.
        let bank = match (&art, cfg.pretrain.aug_bank >= 2 && art.is_some()) {
            (Some(a), true) => {
                let train = train_values(&corpus);
                let data = PretrainData { train: &train, references: &refs, static_pool: &corpus.static_pool };
                let sched = a.schedule.build()?;
                let guidance = cfg.guidance.resolve(sched.steps())?;
                let aug = Augmenter { net: &a.net, schedule: &sched, guidance: &guidance };
                Some(build_aug_bank(&data, &aug, cfg.pretrain.aug_bank, &mut substream(seed, "pretrain.augment"))?)
            }
            _ => None,
        };
        for &arm in arms {
            let pcfg = PretrainConfig {
                use_augmentation: arm.uses_augmentation(),
                use_weighting: arm.uses_weighting(),
                ..cfg.pretrain
            };
            let ddpm = if arm.uses_augmentation() { art.as_ref().map(|a| (a, &cfg.guidance)) } else { None };
            let out = pretrain_with_seed(&corpus, &refs, ddpm, &pcfg, seed, bank.as_deref())?;
            let probe = finetune_with_seed(&corpus, &out.encoder, &cfg.probe, seed)?;
            let m = evaluate_on_test(&corpus, &out.encoder, &probe)?;
            rows.push(AblationRow { arm, seed: Some(seed), accuracy: m.accuracy, macro_f1: m.macro_f1 });
        }
    }
    for &arm in arms {
        let of_arm: Vec<&AblationRow> = rows.iter().filter(|r| r.arm == arm && r.seed.is_some()).collect();
        let n = of_arm.len() as f64;
        rows.push(AblationRow {
            arm,
            seed: None,
            accuracy: of_arm.iter().map(|r| r.accuracy).sum::<f64>() / n,
            macro_f1: of_arm.iter().map(|r| r.macro_f1).sum::<f64>() / n,
        });
    }
    let mut w = create_file(&cfg.ablation_path())?;
    writeln!(w, "{ABLATION_HEADER}")?;
    for r in &rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    w.flush()?;
    Ok(rows)
}
