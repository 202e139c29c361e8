//! C ABI over the `speechcascade` library.
//!
//! Every fallible function returns an [`ScStatus`]. On failure the message
//! is kept per thread and can be read with [`sc_last_error_message`].
//! Strings handed out by the library are freed with [`sc_string_free`];
//! handles have their own `_free` functions. Passing null to a `_free`
//! function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use speechcascade::cascade::CascadeModel;
use speechcascade::corpus::{Diagnosis, SubjectId};
use speechcascade::evaluation;
use speechcascade::features::{hashed_ngram_featurize, FeaturizerConfig};
use speechcascade::pause::{classify_pause, PauseClass, PauseEncoder};
use speechcascade::silence::{silence_vector, VadSegment, SILENCE_DIM};
use speechcascade::transcript::{parse_alignment_str, strip_annotations};
use speechcascade::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Annotation = 5,
    InvalidInput = 6,
    DimensionMismatch = 7,
    MissingClass = 8,
    Untrained = 9,
    Config = 10,
    Serialization = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScPauseClass {
    Short = 0,
    Medium = 1,
    Long = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScDiagnosis {
    Hc = 0,
    Mci = 1,
    Dementia = 2,
}

/// Output of [`sc_cascade_infer`]. `stage2_probability` is NaN when stage 2
/// was not consulted.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScCascadeResult {
    pub label: ScDiagnosis,
    pub stage1_probability: f64,
    pub stage2_probability: f64,
    pub stage2_consulted: bool,
}

/// Opaque hashed n-gram featurizer.
pub struct ScFeaturizer {
    config: FeaturizerConfig,
}

/// Opaque trained cascade.
pub struct ScCascade {
    model: CascadeModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ScStatus {
    match e {
        Error::Io { .. } => ScStatus::Io,
        Error::Parse { .. } => ScStatus::Parse,
        Error::Annotation { .. } => ScStatus::Annotation,
        Error::InvalidInput(_) => ScStatus::InvalidInput,
        Error::DimensionMismatch { .. } => ScStatus::DimensionMismatch,
        Error::MissingClass(_) => ScStatus::MissingClass,
        Error::Untrained => ScStatus::Untrained,
        Error::Config(_) => ScStatus::Config,
        Error::Serialization(_) => ScStatus::Serialization,
    }
}

struct Failure(ScStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `f`, records any failure and converts panics to [`ScStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ScStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ScStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("panic inside speechcascade".into());
            ScStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(ScStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(ScStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn write_out<T>(p: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(v);
    Ok(())
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(ScStatus::InvalidInput, "output contains a NUL byte".into()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn sc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Pause class of a duration in seconds.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_classify_pause(duration_sec: f64, out: *mut ScPauseClass) -> ScStatus {
    guard(|| {
        let class = match classify_pause(duration_sec)? {
            PauseClass::Short => ScPauseClass::Short,
            PauseClass::Medium => ScPauseClass::Medium,
            PauseClass::Long => ScPauseClass::Long,
        };
        write_out(out, class, "out")
    })
}

/// Pause-encodes alignment CSV text (`token,start_sec,end_sec`). Gaps shorter
/// than `min_gap_sec` between words are ignored; pass a negative value for the
/// library default. `*out` receives a space-separated token line.
///
/// # Safety
/// `alignment_csv` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_encode_alignment(alignment_csv: *const c_char, min_gap_sec: f64, out: *mut *mut c_char) -> ScStatus {
    guard(|| {
        let text = str_arg(alignment_csv, "alignment_csv")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let tokens = parse_alignment_str(text, Path::new("<ffi>"))?;
        let mut encoder = PauseEncoder::default();
        if min_gap_sec >= 0.0 {
            encoder.min_gap = min_gap_sec;
        }
        let line = encoder.encode(&tokens).to_line();
        write_out(out, to_c_string(line)?, "out")
    })
}

/// Removes annotation tags and punctuation from a raw transcript.
///
/// # Safety
/// `raw` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_strip_annotations(raw: *const c_char, out: *mut *mut c_char) -> ScStatus {
    guard(|| {
        let raw = str_arg(raw, "raw")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let clean = strip_annotations(raw)?;
        write_out(out, to_c_string(clean.text())?, "out")
    })
}

/// Number of components written by [`sc_silence_vector`].
#[no_mangle]
pub extern "C" fn sc_silence_dim() -> usize {
    SILENCE_DIM
}

/// Silence statistics of `n` speech segments `[starts[i], ends[i]]` in a
/// recording of `total_duration_sec`. Writes `sc_silence_dim()` values.
///
/// # Safety
/// `starts` and `ends` must hold `n` values; `out` must hold `sc_silence_dim()`.
#[no_mangle]
pub unsafe extern "C" fn sc_silence_vector(
    starts: *const f64,
    ends: *const f64,
    n: usize,
    total_duration_sec: f64,
    out: *mut f64,
) -> ScStatus {
    guard(|| {
        let starts = slice_arg(starts, n, "starts")?;
        let ends = slice_arg(ends, n, "ends")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let segments: Vec<VadSegment> = starts.iter().zip(ends).map(|(&s, &e)| VadSegment::new(s, e)).collect();
        let v = silence_vector(&segments, total_duration_sec)?;
        std::slice::from_raw_parts_mut(out, SILENCE_DIM).copy_from_slice(v.as_slice());
        Ok(())
    })
}

/// Creates a featurizer hashing the given n-gram orders into `dim` buckets.
///
/// # Safety
/// `orders` must hold `n_orders` values; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_featurizer_new(
    orders: *const usize,
    n_orders: usize,
    dim: usize,
    seed: u64,
    out: *mut *mut ScFeaturizer,
) -> ScStatus {
    guard(|| {
        let orders = slice_arg(orders, n_orders, "orders")?;
        let config = FeaturizerConfig {
            orders: orders.to_vec(),
            dim,
            seed,
        };
        config.validate()?;
        write_out(out, Box::into_raw(Box::new(ScFeaturizer { config })), "out")
    })
}

/// Output length of a featurizer, 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live featurizer handle.
#[no_mangle]
pub unsafe extern "C" fn sc_featurizer_dim(h: *const ScFeaturizer) -> usize {
    h.as_ref().map_or(0, |f| f.config.dim)
}

/// Featurizes whitespace-separated tokens (for example an encoded line)
/// into `out`, which must have room for `out_len >= dim` values.
///
/// # Safety
/// `h` must be a live handle, `text` NUL-terminated, `out` valid for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn sc_featurizer_apply(h: *const ScFeaturizer, text: *const c_char, out: *mut f64, out_len: usize) -> ScStatus {
    guard(|| {
        let f = h.as_ref().ok_or_else(|| null("featurizer"))?;
        let text = str_arg(text, "text")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len < f.config.dim {
            return Err(Failure(
                ScStatus::BufferTooSmall,
                format!("output buffer holds {out_len} values, {} needed", f.config.dim),
            ));
        }
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let v = hashed_ngram_featurize(&tokens, &f.config)?;
        std::slice::from_raw_parts_mut(out, v.len()).copy_from_slice(&v);
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle from [`sc_featurizer_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sc_featurizer_free(h: *mut ScFeaturizer) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Loads a cascade saved by the `train-cascade` command.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_cascade_load(path: *const c_char, out: *mut *mut ScCascade) -> ScStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = CascadeModel::load(Path::new(path))?;
        write_out(out, Box::into_raw(Box::new(ScCascade { model })), "out")
    })
}

/// Input length a cascade expects, 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live cascade handle.
#[no_mangle]
pub unsafe extern "C" fn sc_cascade_dim(h: *const ScCascade) -> usize {
    h.as_ref().map_or(0, |c| c.model.binding.dim())
}

/// Routes one feature vector through both stages.
///
/// # Safety
/// `h` must be a live handle, `features` must hold `n` values and `out` be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_cascade_infer(h: *const ScCascade, features: *const f64, n: usize, out: *mut ScCascadeResult) -> ScStatus {
    guard(|| {
        let c = h.as_ref().ok_or_else(|| null("cascade"))?;
        let x = slice_arg(features, n, "features")?;
        let o = c.model.infer(&SubjectId::new("ffi"), x)?;
        let label = match o.label {
            Diagnosis::Hc => ScDiagnosis::Hc,
            Diagnosis::Mci => ScDiagnosis::Mci,
            Diagnosis::Dementia => ScDiagnosis::Dementia,
        };
        let result = ScCascadeResult {
            label,
            stage1_probability: o.stage1_probability,
            stage2_probability: o.stage2_probability.unwrap_or(f64::NAN),
            stage2_consulted: o.stage2_probability.is_some(),
        };
        write_out(out, result, "out")
    })
}

/// # Safety
/// `h` must be null or a handle from [`sc_cascade_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sc_cascade_free(h: *mut ScCascade) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Unweighted mean of per-class F1 over classes `0..n_classes`.
///
/// # Safety
/// `y_true` and `y_pred` must hold `n` values; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_macro_f1(y_true: *const u32, y_pred: *const u32, n: usize, n_classes: u32, out: *mut f64) -> ScStatus {
    guard(|| {
        let t = slice_arg(y_true, n, "y_true")?;
        let p = slice_arg(y_pred, n, "y_pred")?;
        let classes: Vec<u32> = (0..n_classes).collect();
        let f = evaluation::macro_f1(t, p, &classes)?;
        write_out(out, f, "out")
    })
}

/// Root mean squared error.
///
/// # Safety
/// `y_true` and `y_pred` must hold `n` values; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_rmse(y_true: *const f64, y_pred: *const f64, n: usize, out: *mut f64) -> ScStatus {
    guard(|| {
        let t = slice_arg(y_true, n, "y_true")?;
        let p = slice_arg(y_pred, n, "y_pred")?;
        write_out(out, evaluation::rmse(t, p)?, "out")
    })
}

/// Word error rate between two texts as an exact ratio `edits / ref_len`.
///
/// # Safety
/// Both texts must be NUL-terminated; `edits` and `ref_len` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sc_wer(reference: *const c_char, hypothesis: *const c_char, edits: *mut usize, ref_len: *mut usize) -> ScStatus {
    guard(|| {
        let r = str_arg(reference, "reference")?;
        let h = str_arg(hypothesis, "hypothesis")?;
        let w = evaluation::wer_text(r, h)?;
        write_out(edits, w.edits, "edits")?;
        write_out(ref_len, w.ref_len, "ref_len")
    })
}
