//! C ABI for the clar library.
//!
//! Every entry point returns a [`ClarStatus`]; results are written through
//! out-pointers supplied by the caller. On failure a message describing the
//! error can be fetched with [`clar_last_error_message`] on the same thread.
//! Models are exposed as opaque handles that must be released with their
//! matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use clar::classifier::LinearProbe;
use clar::contrastive::{weighted_ntxent, EmbeddingBatch, Encoder, REPR_DIM};
use clar::diffusion::{conditioned_generate, forward_sample, GuidanceConfig, NoisePredictor, NoiseSchedule};
use clar::pipeline::DdpmArtifact;
use clar::rng::seeded;
use clar::signal::{dtw_distance, dtw_path, haar_analysis, warp_aggregate};
use clar::weighting::{AdaptiveWeighter, WeightingConfig};
use clar::ClarError;

/// Width of the rows written by [`clar_encoder_embed`].
pub const CLAR_REPR_DIM: usize = 32;

const _: () = assert!(CLAR_REPR_DIM == REPR_DIM);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClarStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Parse = 5,
    Checkpoint = 6,
    MissingArtifact = 7,
    Config = 8,
    BufferTooSmall = 9,
    Panic = 10,
    Internal = 11,
}

/// Guidance constants for [`clar_ddpm_generate`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ClarGuidance {
    pub lambda_h: f64,
    pub lambda_l: f64,
    pub n_h: f64,
    pub n_l: f64,
}

/// Linear noise schedule.
pub struct ClarSchedule(NoiseSchedule);

/// Trained noise predictor together with its schedule.
pub struct ClarDdpm {
    art: DdpmArtifact,
    schedule: NoiseSchedule,
}

/// Static templates and settings for adaptive sample weights.
pub struct ClarWeighter(AdaptiveWeighter);

/// Pretrained encoder.
pub struct ClarEncoder(Encoder);

/// Linear probe over encoder representations.
pub struct ClarProbe(LinearProbe);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: ClarStatus,
    message: String,
}

impl Failure {
    fn new(status: ClarStatus, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

impl From<ClarError> for Failure {
    fn from(e: ClarError) -> Self {
        let status = match &e {
            ClarError::Shape { .. } => ClarStatus::ShapeMismatch,
            ClarError::InvalidArgument(_) | ClarError::StaleTape | ClarError::NonScalarLoss(_) => {
                ClarStatus::InvalidArgument
            }
            ClarError::Parse { .. } | ClarError::Json(_) => ClarStatus::Parse,
            ClarError::Checkpoint(_) => ClarStatus::Checkpoint,
            ClarError::Config(_) => ClarStatus::Config,
            ClarError::MissingArtifact(_) => ClarStatus::MissingArtifact,
            ClarError::Io(_) => ClarStatus::Io,
        };
        Self::new(status, e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> ClarStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            ClarStatus::Ok
        }
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(_) => {
            set_last_error("internal panic");
            ClarStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure::new(ClarStatus::NullPointer, format!("`{name}` is null"))
}

/// # Safety
/// `p` must be null or point to `n` readable values.
unsafe fn input<'a>(p: *const f64, n: usize, name: &str) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// # Safety
/// `p` must be null or point to `n` writable values.
unsafe fn output<'a, T>(p: *mut T, n: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

/// # Safety
/// `p` must be null or valid for one write.
unsafe fn write<T>(p: *mut T, v: T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    p.write(v);
    Ok(())
}

/// # Safety
/// `p` must be null or a live handle of type `T`.
unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

/// # Safety
/// `p` must be null or a NUL-terminated string.
unsafe fn path(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(ClarStatus::InvalidArgument, "path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

fn release<T>(p: *mut T) {
    if !p.is_null() {
        // SAFETY: handles are only created by Box::into_raw in this crate.
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn clar_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null after a
/// successful call. The pointer stays valid until the next call.
#[no_mangle]
pub extern "C" fn clar_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// DTW distance with absolute-difference cost.
///
/// # Safety
/// `a` and `b` must point to `na` and `nb` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clar_dtw_distance(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out: *mut f64,
) -> ClarStatus {
    guard(|| {
        let d = dtw_distance(input(a, na, "a")?, input(b, nb, "b")?)?;
        write(out, d, "out")
    })
}

/// Optimal warping path as `(i, j)` index pairs flattened into `out_pairs`
/// (`2 * capacity` entries). `out_len` always receives the path length;
/// when `capacity` is too small nothing else is written and
/// `CLAR_STATUS_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `out_pairs` may be null
/// when `capacity` is 0.
#[no_mangle]
pub unsafe extern "C" fn clar_dtw_path(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out_pairs: *mut usize,
    capacity: usize,
    out_len: *mut usize,
    out_cost: *mut f64,
) -> ClarStatus {
    guard(|| {
        let a = input(a, na, "a")?;
        let b = input(b, nb, "b")?;
        let path = dtw_path(a, b)?;
        write(out_len, path.pairs.len(), "out_len")?;
        if capacity < path.pairs.len() {
            return Err(Failure::new(
                ClarStatus::BufferTooSmall,
                format!("path has {} pairs, buffer holds {capacity}", path.pairs.len()),
            ));
        }
        let dst = output(out_pairs, 2 * path.pairs.len(), "out_pairs")?;
        for (k, &(i, j)) in path.pairs.iter().enumerate() {
            dst[2 * k] = i;
            dst[2 * k + 1] = j;
        }
        if !out_cost.is_null() {
            out_cost.write(path.cost(a, b));
        }
        Ok(())
    })
}

/// Undecimated Haar analysis; both outputs have length `n`.
///
/// # Safety
/// `x`, `out_high` and `out_low` must be valid for `n` values.
#[no_mangle]
pub unsafe extern "C" fn clar_haar_analysis(
    x: *const f64,
    n: usize,
    out_high: *mut f64,
    out_low: *mut f64,
) -> ClarStatus {
    guard(|| {
        let bands = haar_analysis(input(x, n, "x")?)?;
        output(out_high, n, "out_high")?.copy_from_slice(&bands.high);
        output(out_low, n, "out_low")?.copy_from_slice(&bands.low);
        Ok(())
    })
}

/// Mean-merges `b` onto `a` along their warping path; `out` has length `na`.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn clar_warp_aggregate(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out: *mut f64,
) -> ClarStatus {
    guard(|| {
        let v = warp_aggregate(input(a, na, "a")?, input(b, nb, "b")?)?;
        output(out, na, "out")?.copy_from_slice(&v);
        Ok(())
    })
}

/// # Safety
/// `out` must be writable; the handle is released with [`clar_schedule_free`].
#[no_mangle]
pub unsafe extern "C" fn clar_schedule_new(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    out: *mut *mut ClarSchedule,
) -> ClarStatus {
    guard(|| {
        let s = NoiseSchedule::linear(steps, beta_start, beta_end)?;
        write(out, Box::into_raw(Box::new(ClarSchedule(s))), "out")
    })
}

/// # Safety
/// `s` must be null or a handle from [`clar_schedule_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn clar_schedule_free(s: *mut ClarSchedule) {
    release(s);
}

/// # Safety
/// `s` must be a live schedule handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn clar_schedule_alpha_bar(s: *const ClarSchedule, t: usize, out: *mut f64) -> ClarStatus {
    guard(|| {
        let s = &handle(s, "schedule")?.0;
        if !(1..=s.steps()).contains(&t) {
            return Err(Failure::new(ClarStatus::InvalidArgument, format!("step {t} outside 1..={}", s.steps())));
        }
        write(out, s.alpha_bar(t), "out")
    })
}

/// `sqrt(abar_t) z0 + sqrt(1 - abar_t) eps`, written to `out` (length `n`).
///
/// # Safety
/// `s` must be a live schedule handle; arrays must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn clar_forward_sample(
    s: *const ClarSchedule,
    z0: *const f64,
    eps: *const f64,
    n: usize,
    t: usize,
    out: *mut f64,
) -> ClarStatus {
    guard(|| {
        let s = &handle(s, "schedule")?.0;
        let z = forward_sample(input(z0, n, "z0")?, t, input(eps, n, "eps")?, s)?;
        output(out, n, "out")?.copy_from_slice(&z);
        Ok(())
    })
}

/// Loads a noise predictor checkpoint written by `clar train-ddpm`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn clar_ddpm_load(path_: *const c_char, out: *mut *mut ClarDdpm) -> ClarStatus {
    guard(|| {
        let art = DdpmArtifact::load(&path(path_)?)?;
        let schedule = art.schedule.build()?;
        write(out, Box::into_raw(Box::new(ClarDdpm { art, schedule })), "out")
    })
}

/// # Safety
/// `h` must be null or a handle from [`clar_ddpm_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn clar_ddpm_free(h: *mut ClarDdpm) {
    release(h);
}

/// Sequence length and number of diffusion steps of a loaded predictor.
///
/// # Safety
/// `h` must be a live handle; out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn clar_ddpm_shape(h: *const ClarDdpm, out_len: *mut usize, out_steps: *mut usize) -> ClarStatus {
    guard(|| {
        let h = handle(h, "ddpm")?;
        write(out_len, h.art.net.seq_len(), "out_len")?;
        write(out_steps, h.schedule.steps(), "out_steps")
    })
}

/// Reference-guided generation from `src` and `reference` (both of the
/// predictor's sequence length `n`). A null `guidance` uses the defaults
/// for the predictor's step count.
///
/// # Safety
/// `h` must be a live handle; arrays must hold `n` values; `guidance` may be null.
#[no_mangle]
pub unsafe extern "C" fn clar_ddpm_generate(
    h: *const ClarDdpm,
    src: *const f64,
    reference: *const f64,
    n: usize,
    guidance: *const ClarGuidance,
    seed: u64,
    out: *mut f64,
) -> ClarStatus {
    guard(|| {
        let h = handle(h, "ddpm")?;
        let g = match guidance.as_ref() {
            Some(g) => GuidanceConfig { lambda_h: g.lambda_h, lambda_l: g.lambda_l, n_h: g.n_h, n_l: g.n_l },
            None => GuidanceConfig::for_steps(h.schedule.steps()),
        };
        let mut rng = seeded(seed);
        let z = conditioned_generate(
            input(src, n, "src")?,
            input(reference, n, "reference")?,
            &h.art.net,
            &h.schedule,
            &g,
            &mut rng,
        )?;
        output(out, n, "out")?.copy_from_slice(&z);
        Ok(())
    })
}

/// Draws `templates` static windows from a row-major `[rows, len]` pool.
/// `window` 0 selects the default window for `seq_len`.
///
/// # Safety
/// `pool` must hold `rows * len` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn clar_weighter_new(
    pool: *const f64,
    rows: usize,
    len: usize,
    seq_len: usize,
    window: usize,
    templates: usize,
    alpha: f64,
    seed: u64,
    out: *mut *mut ClarWeighter,
) -> ClarStatus {
    guard(|| {
        let flat = input(pool, rows * len, "pool")?;
        if len == 0 {
            return Err(Failure::new(ClarStatus::InvalidArgument, "pool rows are empty"));
        }
        let seqs: Vec<&[f64]> = flat.chunks(len).collect();
        let cfg = WeightingConfig { window: (window > 0).then_some(window), templates, alpha, floor: 0.0 };
        let w = AdaptiveWeighter::new(&seqs, seq_len, &cfg, &mut seeded(seed))?;
        write(out, Box::into_raw(Box::new(ClarWeighter(w))), "out")
    })
}

/// # Safety
/// `w` must be null or a handle from [`clar_weighter_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn clar_weighter_free(w: *mut ClarWeighter) {
    release(w);
}

/// Adaptive weight of one crop.
///
/// # Safety
/// `w` must be a live handle, `x` must hold `n` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn clar_weighter_sample_weight(
    w: *const ClarWeighter,
    x: *const f64,
    n: usize,
    out: *mut f64,
) -> ClarStatus {
    guard(|| {
        let w = &handle(w, "weighter")?.0;
        write(out, w.sample_weight(input(x, n, "x")?)?, "out")
    })
}

/// Weighted NT-Xent over `two_m` unit rows of width `dim` (row-major);
/// rows `2k` and `2k + 1` form pair `k` with weight `weights[k]`.
///
/// # Safety
/// `embeddings` must hold `two_m * dim` values, `weights` `two_m / 2`.
#[no_mangle]
pub unsafe extern "C" fn clar_weighted_ntxent(
    embeddings: *const f64,
    two_m: usize,
    dim: usize,
    weights: *const f64,
    tau: f64,
    out: *mut f64,
) -> ClarStatus {
    guard(|| {
        if dim == 0 || two_m % 2 != 0 {
            return Err(Failure::new(ClarStatus::ShapeMismatch, "need an even row count and dim >= 1"));
        }
        let flat = input(embeddings, two_m * dim, "embeddings")?;
        let w = input(weights, two_m / 2, "weights")?;
        let batch = EmbeddingBatch::new(flat.chunks(dim).map(<[f64]>::to_vec).collect(), w.to_vec())?;
        write(out, weighted_ntxent(&batch, tau)?, "out")
    })
}

/// Loads an encoder checkpoint written by `clar pretrain`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn clar_encoder_load(path_: *const c_char, out: *mut *mut ClarEncoder) -> ClarStatus {
    guard(|| {
        let records = read_records(&path(path_)?)?;
        let enc = Encoder::from_records(&records)?;
        write(out, Box::into_raw(Box::new(ClarEncoder(enc))), "out")
    })
}

fn read_records(p: &std::path::Path) -> Result<Vec<(String, clar::autodiff::Tensor)>, Failure> {
    let f = std::fs::File::open(p).map_err(|e| Failure::new(ClarStatus::Io, format!("{}: {e}", p.display())))?;
    Ok(clar::autodiff::read_checkpoint(std::io::BufReader::new(f))?)
}

/// # Safety
/// `h` must be null or a handle from [`clar_encoder_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn clar_encoder_free(h: *mut ClarEncoder) {
    release(h);
}

/// # Safety
/// `h` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn clar_encoder_input_len(h: *const ClarEncoder, out: *mut usize) -> ClarStatus {
    guard(|| write(out, handle(h, "encoder")?.0.input_len(), "out"))
}

/// Representations of `rows` sequences (row-major, encoder input length
/// each); `out` receives `rows * CLAR_REPR_DIM` values.
///
/// # Safety
/// Arrays must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn clar_encoder_embed(
    h: *const ClarEncoder,
    x: *const f64,
    rows: usize,
    out: *mut f64,
) -> ClarStatus {
    guard(|| {
        let enc = &handle(h, "encoder")?.0;
        let len = enc.input_len();
        let seqs: Vec<&[f64]> = input(x, rows * len, "x")?.chunks(len).collect();
        let reps = enc.embed(&seqs)?;
        let dst = output(out, rows * REPR_DIM, "out")?;
        for (row, r) in dst.chunks_mut(REPR_DIM).zip(&reps) {
            row.copy_from_slice(r);
        }
        Ok(())
    })
}

/// Loads a probe checkpoint written by `clar finetune`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn clar_probe_load(path_: *const c_char, out: *mut *mut ClarProbe) -> ClarStatus {
    guard(|| {
        let probe = LinearProbe::from_records(&read_records(&path(path_)?)?)?;
        write(out, Box::into_raw(Box::new(ClarProbe(probe))), "out")
    })
}

/// # Safety
/// `h` must be null or a handle from [`clar_probe_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn clar_probe_free(h: *mut ClarProbe) {
    release(h);
}

/// Predicted class of each of `rows` sequences.
///
/// # Safety
/// `x` must hold `rows * input_len` values and `out_labels` `rows` entries.
#[no_mangle]
pub unsafe extern "C" fn clar_probe_predict(
    probe: *const ClarProbe,
    encoder: *const ClarEncoder,
    x: *const f64,
    rows: usize,
    out_labels: *mut usize,
) -> ClarStatus {
    guard(|| {
        let probe = &handle(probe, "probe")?.0;
        let enc = &handle(encoder, "encoder")?.0;
        let len = enc.input_len();
        let seqs: Vec<&[f64]> = input(x, rows * len, "x")?.chunks(len).collect();
        let pred = probe.predict(&enc.embed(&seqs)?)?;
        output(out_labels, rows, "out_labels")?.copy_from_slice(&pred);
        Ok(())
    })
}
