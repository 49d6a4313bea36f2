//! Synthetic activity corpus, persistence, splits and reference pairing.
//!
//! Each sample is one channel of a CSI-like amplitude stream: a flat static
//! stretch, one or two windowed sinusoid strokes (with a near-flat pause
//! between two strokes) and additive Gaussian noise. Subjects scale the
//! amplitude, duration and frequency of every activity they perform.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ClarError, Result};
use crate::rng::{normal_vec, substream, ClarRng};
use crate::signal::dtw_distance;

/// Shape of one activity class.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivitySpec {
    pub class: usize,
    pub strokes: Vec<Stroke>,
    /// Share of the activity span taken by the pause between two strokes.
    pub pause_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stroke {
    /// Oscillation cycles across the stroke.
    pub cycles: f64,
    pub amplitude: f64,
}

impl ActivitySpec {
    /// Even classes draw two strokes with a pause, odd classes one stroke.
    /// Cycle counts step through five levels so neighbouring classes differ.
    pub fn for_class(class: usize) -> Self {
        let level = |k: usize| 1.5 + 0.75 * ((class + 2 * k) % 5) as f64 + 0.4 * (class / 5) as f64;
        let amp = |k: usize| if (class + k) % 2 == 0 { 1.0 } else { 0.7 };
        if class % 2 == 0 {
            Self {
                class,
                strokes: vec![
                    Stroke { cycles: level(0), amplitude: amp(0) },
                    Stroke { cycles: level(1), amplitude: amp(1) },
                ],
                pause_fraction: 0.25,
            }
        } else {
            Self { class, strokes: vec![Stroke { cycles: level(0), amplitude: amp(0) }], pause_fraction: 0.0 }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.strokes.len()) {
            return Err(ClarError::invalid("an activity has one or two strokes"));
        }
        if !(0.0..=0.4).contains(&self.pause_fraction) {
            return Err(ClarError::invalid(format!("pause fraction {} outside [0, 0.4]", self.pause_fraction)));
        }
        Ok(())
    }
}

/// Per-subject motion habit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectHabit {
    pub amplitude: f64,
    pub duration: f64,
    /// Relative frequency offset.
    pub freq_jitter: f64,
}

impl SubjectHabit {
    pub const NEUTRAL: Self = Self { amplitude: 1.0, duration: 1.0, freq_jitter: 0.0 };

    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            amplitude: rng.random_range(0.6..=1.4),
            duration: rng.random_range(0.8..=1.2),
            freq_jitter: rng.random_range(-0.1..=0.1),
        }
    }
}

/// Where the activity sits inside the sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub len: usize,
    pub start: usize,
    pub span: usize,
}

/// Index ranges of a rendered activity.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub values: Vec<f64>,
    pub strokes: Vec<(usize, usize)>,
    pub pause: Option<(usize, usize)>,
}

/// Flat-top window on `u in [0, 1]`: ~1 across the middle, ~0.1 at the ends.
fn envelope(u: f64) -> f64 {
    (-((2.0 * u - 1.0) / 0.9).powi(8)).exp()
}

/// Renders `spec` performed with `habit` at `layout`, plus `N(0, noise_std^2)` noise.
pub fn render_activity<R: Rng + ?Sized>(
    spec: &ActivitySpec,
    habit: &SubjectHabit,
    layout: Layout,
    noise_std: f64,
    rng: &mut R,
) -> Result<Rendered> {
    spec.validate()?;
    if layout.start + layout.span > layout.len || layout.span < 4 {
        return Err(ClarError::invalid(format!("activity layout {layout:?} does not fit")));
    }
    let mut values = vec![0.0; layout.len];
    let n_strokes = spec.strokes.len();
    let pause_len = if n_strokes == 2 { (spec.pause_fraction * layout.span as f64).round() as usize } else { 0 };
    let stroke_len = (layout.span - pause_len) / n_strokes;
    let mut strokes = Vec::with_capacity(n_strokes);
    let mut pause = None;
    let mut cursor = layout.start;
    for (k, s) in spec.strokes.iter().enumerate() {
        if k == 1 {
            pause = Some((cursor, cursor + pause_len));
            cursor += pause_len;
        }
        let (a, b) = (cursor, cursor + stroke_len);
        let cycles = s.cycles * (1.0 + habit.freq_jitter);
        for (i, v) in values[a..b].iter_mut().enumerate() {
            let u = (i as f64 + 0.5) / stroke_len as f64;
            *v = s.amplitude * habit.amplitude * envelope(u) * (std::f64::consts::TAU * cycles * u).sin();
        }
        strokes.push((a, b));
        cursor = b;
    }
    if noise_std > 0.0 {
        for (v, e) in values.iter_mut().zip(normal_vec(rng, layout.len)) {
            *v += noise_std * e;
        }
    }
    Ok(Rendered { values, strokes, pause })
}

/// Activity-free sequence.
pub fn render_static<R: Rng + ?Sized>(len: usize, noise_std: f64, rng: &mut R) -> Vec<f64> {
    normal_vec(rng, len).into_iter().map(|e| noise_std * e).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Stratified random split of items within each class.
    Item,
    /// Whole subjects are held out for testing.
    Subject,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub class: usize,
    pub subject: usize,
    pub split: Split,
    pub labeled: bool,
    pub values: Vec<f64>,
}

/// Generation settings; also written as the corpus sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub subjects: usize,
    pub length: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub static_pool: usize,
    pub train_fraction: f64,
    pub labeled_fraction: f64,
    pub split_mode: SplitMode,
    /// Fraction of the sequence covered by an activity at neutral duration.
    pub activity_fraction: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            num_classes: 5,
            per_class: 50,
            subjects: 5,
            length: 128,
            noise_std: 0.05,
            seed: 0,
            static_pool: 20,
            train_fraction: 0.8,
            labeled_fraction: 0.25,
            split_mode: SplitMode::Item,
            activity_fraction: 0.8,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 1 || self.per_class < 1 || self.subjects < 1 {
            return Err(ClarError::invalid("class, per-class and subject counts must be >= 1"));
        }
        if self.length < 32 {
            return Err(ClarError::invalid(format!("sequence length {} < 32", self.length)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(ClarError::invalid("noise_std must be finite and >= 0"));
        }
        if self.static_pool < 1 {
            return Err(ClarError::invalid("static pool needs at least one sequence"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(ClarError::invalid("train fraction must lie in (0, 1)"));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(ClarError::invalid("labeled fraction must lie in (0, 1]"));
        }
        if !(self.activity_fraction > 0.1 && self.activity_fraction <= 1.0) {
            return Err(ClarError::invalid("activity fraction must lie in (0.1, 1]"));
        }
        if self.split_mode == SplitMode::Subject && self.subjects < 2 {
            return Err(ClarError::invalid("subject split needs at least 2 subjects"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub static_pool: Vec<Vec<f64>>,
}

impl Corpus {
    pub fn seq_len(&self) -> usize {
        self.samples.first().map_or(0, |s| s.values.len())
    }

    pub fn num_classes(&self) -> usize {
        self.samples.iter().map(|s| s.class + 1).max().unwrap_or(0)
    }

    pub fn train(&self) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == Split::Train).collect()
    }

    pub fn test(&self) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == Split::Test).collect()
    }

    pub fn labeled(&self) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == Split::Train && s.labeled).collect()
    }

    /// Order-sensitive FNV-1a digest of every value bit pattern and label.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for s in &self.samples {
            eat(s.id as u64);
            eat(s.class as u64);
            eat(s.subject as u64);
            eat(u64::from(s.split == Split::Train));
            eat(u64::from(s.labeled));
            s.values.iter().for_each(|v| eat(v.to_bits()));
        }
        for p in &self.static_pool {
            p.iter().for_each(|v| eat(v.to_bits()));
        }
        h
    }
}

fn subject_habits(spec: &CorpusSpec) -> Vec<SubjectHabit> {
    let mut rng = substream(spec.seed, "data.subjects");
    (0..spec.subjects).map(|_| SubjectHabit::draw(&mut rng)).collect()
}

fn draw_layout<R: Rng + ?Sized>(len: usize, activity_fraction: f64, habit: &SubjectHabit, rng: &mut R) -> Layout {
    let span = ((activity_fraction * habit.duration * len as f64).round() as usize).clamp(8, len - 4);
    let slack = len - span;
    let start = rng.random_range(slack / 4..=slack - slack / 4);
    Layout { len, start, span }
}

/// Builds the corpus described by `spec`. Deterministic in `spec.seed`.
pub fn synth_generate(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let habits = subject_habits(spec);
    let mut rng = substream(spec.seed, "data.samples");
    let mut samples = Vec::with_capacity(spec.num_classes * spec.per_class);
    for class in 0..spec.num_classes {
        let act = ActivitySpec::for_class(class);
        for k in 0..spec.per_class {
            let subject = (k + class) % spec.subjects;
            let habit = &habits[subject];
            let layout = draw_layout(spec.length, spec.activity_fraction, habit, &mut rng);
            let r = render_activity(&act, habit, layout, spec.noise_std, &mut rng)?;
            samples.push(Sample {
                id: samples.len(),
                class,
                subject,
                split: Split::Train,
                labeled: false,
                values: r.values,
            });
        }
    }
    let mut pool_rng = substream(spec.seed, "data.static");
    let static_pool = (0..spec.static_pool).map(|_| render_static(spec.length, spec.noise_std, &mut pool_rng)).collect();
    let mut corpus = Corpus { samples, static_pool };
    assign_splits(&mut corpus, spec, &mut substream(spec.seed, "data.split"))?;
    Ok(corpus)
}

/// Assigns train/test and the labeled mask, stratified by class.
pub fn assign_splits(corpus: &mut Corpus, spec: &CorpusSpec, rng: &mut ClarRng) -> Result<()> {
    let classes = corpus.num_classes();
    match spec.split_mode {
        SplitMode::Item => {
            for c in 0..classes {
                let mut idx: Vec<usize> = (0..corpus.samples.len()).filter(|&i| corpus.samples[i].class == c).collect();
                idx.shuffle(rng);
                let n_train = ((spec.train_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len());
                for (r, &i) in idx.iter().enumerate() {
                    corpus.samples[i].split = if r < n_train { Split::Train } else { Split::Test };
                }
            }
        }
        SplitMode::Subject => {
            let mut subjects: Vec<usize> = (0..spec.subjects).collect();
            subjects.shuffle(rng);
            let n_test = (((1.0 - spec.train_fraction) * spec.subjects as f64).round() as usize).clamp(1, spec.subjects - 1);
            let held: Vec<usize> = subjects[..n_test].to_vec();
            for s in &mut corpus.samples {
                s.split = if held.contains(&s.subject) { Split::Test } else { Split::Train };
            }
        }
    }
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..corpus.samples.len())
            .filter(|&i| corpus.samples[i].class == c && corpus.samples[i].split == Split::Train)
            .collect();
        idx.shuffle(rng);
        let n_lab = ((spec.labeled_fraction * idx.len() as f64).round() as usize).clamp(1.min(idx.len()), idx.len());
        for (r, &i) in idx.iter().enumerate() {
            corpus.samples[i].labeled = r < n_lab;
        }
    }
    Ok(())
}

/// Reference candidates for every training item (indexed like the training list).
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTable {
    pub candidates: Vec<Vec<usize>>,
}

impl ReferenceTable {
    pub fn draw<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Result<usize> {
        self.candidates
            .get(i)
            .and_then(|c| c.choose(rng))
            .copied()
            .ok_or_else(|| ClarError::invalid(format!("no reference candidates for item {i}")))
    }
}

/// Labeled items pair with other labeled items of their class; unlabeled
/// items pair with their `k` DTW-nearest training items (ties by index).
pub fn pair_candidates<S: AsRef<[f64]>>(train: &[S], labels: &[Option<usize>], k: usize) -> Result<ReferenceTable> {
    let n = train.len();
    if n == 0 {
        return Err(ClarError::invalid("no training samples to pair"));
    }
    if labels.len() != n {
        return Err(ClarError::invalid("labels must match training samples"));
    }
    if k < 1 {
        return Err(ClarError::invalid("k must be >= 1"));
    }
    let mut dist: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut candidates = Vec::with_capacity(n);
    for i in 0..n {
        match labels[i] {
            Some(c) => {
                let peers: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == Some(c)).collect();
                if peers.is_empty() {
                    return Err(ClarError::invalid(format!("labeled item {i} (class {c}) has no same-class peer")));
                }
                candidates.push(peers);
            }
            None => {
                if dist[i].is_none() {
                    let row = (0..n)
                        .map(|j| dtw_distance(train[i].as_ref(), train[j].as_ref()))
                        .collect::<Result<Vec<f64>>>()?;
                    dist[i] = Some(row);
                }
                let row = dist[i].as_ref().expect("filled above");
                let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
                order.truncate(k);
                if order.is_empty() {
                    return Err(ClarError::invalid(format!("item {i} has no other training item to pair with")));
                }
                candidates.push(order);
            }
        }
    }
    Ok(ReferenceTable { candidates })
}

/// [`pair_candidates`] over the training split of `corpus`.
/// Mean DTW distance over all within-class and all cross-class pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDtw {
    pub within: f64,
    pub cross: f64,
}

pub fn class_dtw_means<S: AsRef<[f64]>>(seqs: &[S], classes: &[usize]) -> Result<ClassDtw> {
    if seqs.len() != classes.len() {
        return Err(ClarError::invalid("one class label per sequence"));
    }
    let (mut within, mut nw, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..seqs.len() {
        for j in i + 1..seqs.len() {
            let d = dtw_distance(seqs[i].as_ref(), seqs[j].as_ref())?;
            if classes[i] == classes[j] {
                within += d;
                nw += 1;
            } else {
                cross += d;
                nc += 1;
            }
        }
    }
    if nw == 0 || nc == 0 {
        return Err(ClarError::invalid("need at least two classes and a repeated class"));
    }
    Ok(ClassDtw { within: within / nw as f64, cross: cross / nc as f64 })
}

pub fn corpus_references(corpus: &Corpus, k: usize) -> Result<ReferenceTable> {
    let train = corpus.train();
    let seqs: Vec<&[f64]> = train.iter().map(|s| s.values.as_slice()).collect();
    let labels: Vec<Option<usize>> = train.iter().map(|s| s.labeled.then_some(s.class)).collect();
    pair_candidates(&seqs, &labels, k)
}

const STATIC_SPLIT: &str = "static";

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> ClarError {
    ClarError::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn field<T: FromStr>(path: &Path, line: usize, name: &str, raw: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| parse_err(path, line, format!("bad {name} `{raw}`")))
}

/// Writes the corpus CSV. Static-pool rows use split `static`.
pub fn save_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    let len = corpus.seq_len().max(corpus.static_pool.first().map_or(0, Vec::len));
    let mut header = String::from("sample_id,class,subject,split,labeled");
    for t in 0..len {
        header.push_str(&format!(",t{t}"));
    }
    writeln!(w, "{header}")?;
    let write_values = |w: &mut BufWriter<fs::File>, vals: &[f64]| -> std::io::Result<()> {
        for v in vals {
            write!(w, ",{v:.16e}")?;
        }
        writeln!(w)
    };
    for s in &corpus.samples {
        write!(w, "{},{},{},{},{}", s.id, s.class, s.subject, s.split, u8::from(s.labeled))?;
        write_values(&mut w, &s.values)?;
    }
    let base = corpus.samples.len();
    for (i, p) in corpus.static_pool.iter().enumerate() {
        write!(w, "{},0,0,{STATIC_SPLIT},0", base + i)?;
        write_values(&mut w, p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Err(parse_err(path, 1, "no samples")),
    };
    let cols: Vec<&str> = header.split(',').collect();
    let fixed = ["sample_id", "class", "subject", "split", "labeled"];
    if cols.len() < fixed.len() + 1 || cols[..fixed.len()] != fixed {
        return Err(parse_err(path, 1, "header must start with sample_id,class,subject,split,labeled,t0"));
    }
    let width = cols.len();
    let mut samples = Vec::new();
    let mut static_pool = Vec::new();
    for (n, line) in lines.enumerate() {
        let lineno = n + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != width {
            return Err(parse_err(path, lineno, format!("expected {width} columns, found {}", parts.len())));
        }
        let values = parts[fixed.len()..]
            .iter()
            .enumerate()
            .map(|(t, raw)| {
                let v: f64 = field(path, lineno, &format!("t{t}"), raw)?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(path, lineno, format!("t{t} is not finite")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let split = match parts[3].trim() {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            STATIC_SPLIT => None,
            other => return Err(parse_err(path, lineno, format!("unknown split `{other}`"))),
        };
        let labeled = match parts[4].trim() {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(path, lineno, format!("labeled must be 0 or 1, got `{other}`"))),
        };
        match split {
            Some(split) => samples.push(Sample {
                id: field(path, lineno, "sample_id", parts[0])?,
                class: field(path, lineno, "class", parts[1])?,
                subject: field(path, lineno, "subject", parts[2])?,
                split,
                labeled,
                values,
            }),
            None => static_pool.push(values),
        }
    }
    if samples.is_empty() {
        return Err(parse_err(path, 1, "no samples"));
    }
    if let Some(s) = samples.iter().find(|s| s.labeled && s.split != Split::Train) {
        return Err(ClarError::invalid(format!("sample {} is labeled but not in the training split", s.id)));
    }
    Ok(Corpus { samples, static_pool })
}

/// `<corpus>.meta.json` next to the CSV.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

pub fn save_sidecar(csv: &Path, spec: &CorpusSpec) -> Result<()> {
    fs::write(sidecar_path(csv), serde_json::to_string_pretty(spec)? + "\n")?;
    Ok(())
}

pub fn load_sidecar(csv: &Path) -> Result<CorpusSpec> {
    Ok(serde_json::from_str(&fs::read_to_string(sidecar_path(csv))?)?)
}
