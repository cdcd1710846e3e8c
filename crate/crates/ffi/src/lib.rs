//! C ABI over the `semisent` core: load a saved classifier behind an opaque
//! handle and run it on a `T×D` feature matrix, resolve annotator votes, and
//! derive averaged metrics from a confusion matrix.
//!
//! Every fallible function returns a [`SemisentStatus`]. On failure the
//! message is available from [`semisent_last_error`] on the same thread until
//! the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use semisent::data::majority_vote;
use semisent::metrics::{derive_metrics, ConfusionMatrix};
use semisent::model::{load_model, Input, SentimentClassifier};
use semisent::numkernel::Tensor;
use semisent::{Error, SentimentLabel};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemisentStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Config = 4,
    Stage = 5,
    Corrupt = 6,
    Version = 7,
    Parse = 8,
    Data = 9,
    NonFinite = 10,
    Io = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

impl From<&Error> for SemisentStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Dimension(_) | Error::EmptySequence | Error::ClassIndex { .. } => SemisentStatus::Dimension,
            Error::Config(_) => SemisentStatus::Config,
            Error::Stage(_) => SemisentStatus::Stage,
            Error::Corrupt { .. } => SemisentStatus::Corrupt,
            Error::Version { .. } => SemisentStatus::Version,
            Error::Parse { .. } | Error::UnknownLabel(_) => SemisentStatus::Parse,
            Error::Data(_) | Error::DegenerateCorpus(_) | Error::EmptyEvaluation(_) => SemisentStatus::Data,
            Error::NonFinite(_) => SemisentStatus::NonFinite,
            Error::Io { .. } => SemisentStatus::Io,
        }
    }
}

/// Opaque model handle.
pub struct SemisentModel {
    inner: SentimentClassifier,
    stage: CString,
}

/// Recall, precision and F1 of one average.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SemisentScores {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NUL bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: SemisentStatus, msg: impl Into<String>) -> SemisentStatus {
    set_error(msg.into());
    status
}

fn guard(f: impl FnOnce() -> SemisentStatus) -> SemisentStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(SemisentStatus::Panic, "internal panic"),
    }
}

fn from_core(e: Error) -> SemisentStatus {
    let status = SemisentStatus::from(&e);
    fail(status, e.to_string())
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn semisent_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn semisent_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model file. On success `*out` owns a handle that must be released
/// with [`semisent_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semisent_model_load(path: *const c_char, out: *mut *mut SemisentModel) -> SemisentStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(SemisentStatus::NullPointer, "path and out must be non-null");
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(SemisentStatus::InvalidArgument, "path is not valid UTF-8");
        };
        match load_model(Path::new(path)) {
            Ok(inner) => {
                let stage = CString::new(inner.stage().as_str()).expect("stage names have no NUL");
                *out = Box::into_raw(Box::new(SemisentModel { inner, stage }));
                SemisentStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Releases a handle from [`semisent_model_load`]. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn semisent_model_free(model: *mut SemisentModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of output classes, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn semisent_model_num_classes(model: *const SemisentModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_classes())
}

/// Features per frame expected by [`semisent_model_forward`], or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn semisent_model_input_dim(model: *const SemisentModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config().input_dim)
}

/// Stage tag (`fresh`, `theta_p`, `theta_f`, ...), owned by the handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn semisent_model_stage(model: *const SemisentModel) -> *const c_char {
    model.as_ref().map_or(ptr::null(), |m| m.stage.as_ptr())
}

/// Runs the classifier on a row-major `frames` matrix of `t × d` values.
/// Writes `num_classes` logits into `logits` and, when `attention` is
/// non-NULL, `t` attention weights into it.
///
/// # Safety
/// `frames` must hold `t * d` doubles, `logits` `logits_len` doubles and
/// `attention` (if non-NULL) `attention_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn semisent_model_forward(
    model: *const SemisentModel,
    frames: *const f64,
    t: usize,
    d: usize,
    logits: *mut f64,
    logits_len: usize,
    attention: *mut f64,
    attention_len: usize,
) -> SemisentStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(SemisentStatus::NullPointer, "model is NULL");
        };
        if frames.is_null() || logits.is_null() {
            return fail(SemisentStatus::NullPointer, "frames and logits must be non-null");
        }
        let Some(n) = t.checked_mul(d) else {
            return fail(SemisentStatus::InvalidArgument, "t * d overflows");
        };
        let classes = m.inner.num_classes();
        if logits_len < classes {
            return fail(SemisentStatus::BufferTooSmall, format!("logits needs {classes} slots, got {logits_len}"));
        }
        if !attention.is_null() && attention_len < t {
            return fail(SemisentStatus::BufferTooSmall, format!("attention needs {t} slots, got {attention_len}"));
        }
        let data = std::slice::from_raw_parts(frames, n).to_vec();
        let x = match Tensor::from_vec(&[t, d], data) {
            Ok(x) => x,
            Err(e) => return from_core(e),
        };
        match m.inner.forward(Input::Frames(&x)) {
            Ok((z, a)) => {
                std::slice::from_raw_parts_mut(logits, classes).copy_from_slice(&z);
                if !attention.is_null() {
                    std::slice::from_raw_parts_mut(attention, t).copy_from_slice(&a);
                }
                SemisentStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Majority vote over three labels (0 Negative, 1 Neutral, 2 Positive).
/// `*out` is the winning label, or -1 when all three differ.
///
/// # Safety
/// `labels` must point to 3 values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn semisent_majority_vote(labels: *const i32, out: *mut i32) -> SemisentStatus {
    guard(|| {
        if labels.is_null() || out.is_null() {
            return fail(SemisentStatus::NullPointer, "labels and out must be non-null");
        }
        let raw = std::slice::from_raw_parts(labels, 3);
        let mut triple = [SentimentLabel::Neutral; 3];
        for (slot, &l) in triple.iter_mut().zip(raw) {
            match usize::try_from(l).ok().and_then(SentimentLabel::from_index) {
                Some(label) => *slot = label,
                None => return fail(SemisentStatus::InvalidArgument, format!("label {l} is not 0, 1 or 2")),
            }
        }
        *out = majority_vote(triple).map_or(-1, |l| l.index() as i32);
        SemisentStatus::Ok
    })
}

/// Unweighted (macro) and weighted averages from a row-major `classes ×
/// classes` confusion matrix, rows gold and columns predicted.
///
/// # Safety
/// `counts` must hold `classes * classes` values; the output pointers must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn semisent_metrics_from_counts(
    counts: *const u64,
    classes: usize,
    unweighted: *mut SemisentScores,
    weighted: *mut SemisentScores,
) -> SemisentStatus {
    guard(|| {
        if counts.is_null() || unweighted.is_null() || weighted.is_null() {
            return fail(SemisentStatus::NullPointer, "counts and outputs must be non-null");
        }
        if classes == 0 {
            return fail(SemisentStatus::InvalidArgument, "classes must be >= 1");
        }
        let Some(n) = classes.checked_mul(classes) else {
            return fail(SemisentStatus::InvalidArgument, "classes * classes overflows");
        };
        let flat = std::slice::from_raw_parts(counts, n);
        let rows: Vec<Vec<u64>> = flat.chunks(classes).map(<[u64]>::to_vec).collect();
        let names = (0..classes).map(|i| format!("c{i}")).collect();
        let report = match ConfusionMatrix::from_counts(names, &rows).and_then(|cm| derive_metrics(&cm)) {
            Ok(r) => r,
            Err(e) => return from_core(e),
        };
        let conv = |s: semisent::metrics::Scores| SemisentScores { recall: s.recall, precision: s.precision, f1: s.f1 };
        *unweighted = conv(report.unweighted);
        *weighted = conv(report.weighted);
        SemisentStatus::Ok
    })
}
