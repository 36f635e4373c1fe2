//! C ABI over the detector and the metric kernels.
//!
//! Every function returns a [`DissimStatus`]; on failure the message is
//! available from [`dissim_last_error`] on the same thread. Detectors are
//! opaque handles created by [`dissim_detector_load`] and released with
//! [`dissim_detector_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use dissim::evaluation::{roc_auc, softmax_entropy_map};
use dissim::grid::{Grid, ProbField};
use dissim::models::{DetectorModel, PairBatch};
use dissim::nn::Checkpoint;
use dissim::patches::{semantic_difference, Origin, Patch, Source};
use dissim::toyworld::ClassSet;
use dissim::{Error, ErrorKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DissimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Training = 3,
    Internal = 4,
    BufferTooSmall = 5,
    UndefinedMetric = 6,
    Panic = 7,
}

/// Opaque detector handle.
pub struct DissimDetector {
    model: DetectorModel<f32>,
    classes: ClassSet,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("no interior nul"));
}

fn status_of(e: &Error) -> DissimStatus {
    if matches!(e, Error::UndefinedMetric(_)) {
        return DissimStatus::UndefinedMetric;
    }
    match e.kind() {
        ErrorKind::Input => DissimStatus::InvalidInput,
        ErrorKind::Training => DissimStatus::Training,
        ErrorKind::Internal => DissimStatus::Internal,
    }
}

enum Fail {
    Status(DissimStatus, String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(DissimStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DissimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DissimStatus::Ok
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("panic inside dissim");
            DissimStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for `len` writes.
unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dissim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or "" after a success.
/// Valid until the next dissim call on the same thread.
#[no_mangle]
pub extern "C" fn dissim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a detector checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dissim_detector_load(path: *const c_char, out: *mut *mut DissimDetector) -> DissimStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail::Status(DissimStatus::InvalidInput, "path is not UTF-8".into()))?;
        let model = DetectorModel::from_checkpoint(&Checkpoint::load(Path::new(path))?)?;
        *out = Box::into_raw(Box::new(DissimDetector {
            model,
            classes: ClassSet::default(),
        }));
        Ok(())
    })
}

/// Release a detector. Null is ignored.
///
/// # Safety
/// `det` must come from [`dissim_detector_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dissim_detector_free(det: *mut DissimDetector) {
    if !det.is_null() {
        drop(Box::from_raw(det));
    }
}

/// Patch side length `P` the detector expects.
///
/// # Safety
/// `det` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dissim_detector_patch_size(det: *const DissimDetector, out: *mut usize) -> DissimStatus {
    guard(|| {
        let d = det.as_ref().ok_or_else(|| null("det"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = d.model.config.patch_size;
        Ok(())
    })
}

/// Scores per pair: 1 for patch-level heads, `P*P` for per-pixel heads.
///
/// # Safety
/// `det` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dissim_detector_outputs_per_pair(det: *const DissimDetector, out: *mut usize) -> DissimStatus {
    guard(|| {
        let d = det.as_ref().ok_or_else(|| null("det"))?;
        let (h, w) = d.model.output_size();
        *out.as_mut().ok_or_else(|| null("out"))? = h * w;
        Ok(())
    })
}

fn patch(rgb: &[u8], labels: Option<&[u8]>, p: usize, k: usize, source: Source) -> Result<Patch, Fail> {
    let labels = match labels {
        Some(l) => Grid::from_vec(p, p, l.to_vec())?,
        None => Grid::filled(p, p, 0),
    };
    Ok(Patch {
        size: p,
        rgb: rgb.iter().map(|&v| v as f32 / 255.0).collect(),
        labels,
        origin: Origin {
            image: Arc::from("ffi"),
            row: k,
            col: 0,
        },
        source,
    })
}

/// Score `n_pairs` aligned patch pairs.
///
/// `real` and `synthetic` hold `n_pairs` patches of interleaved 8-bit RGB,
/// `P*P*3` bytes each. `labels` holds the class ids of the synthetic patches
/// (`P*P` bytes each); it is required by the transfer and discriminator heads
/// and may be null otherwise. `out` receives `n_pairs * outputs_per_pair`
/// scores in [0, 1].
///
/// # Safety
/// Pointers must be valid for the sizes above; `out` for `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn dissim_detector_score(
    det: *const DissimDetector,
    real: *const u8,
    synthetic: *const u8,
    labels: *const u8,
    n_pairs: usize,
    out: *mut f32,
    out_len: usize,
) -> DissimStatus {
    guard(|| {
        let d = det.as_ref().ok_or_else(|| null("det"))?;
        if n_pairs == 0 {
            return Ok(());
        }
        let p = d.model.config.patch_size;
        let (oh, ow) = d.model.output_size();
        let need = n_pairs * oh * ow;
        if out_len < need {
            return Err(Fail::Status(
                DissimStatus::BufferTooSmall,
                format!("output needs {need} floats, got {out_len}"),
            ));
        }
        let px = p * p * 3;
        let real = slice(real, n_pairs * px, "real")?;
        let synthetic = slice(synthetic, n_pairs * px, "synthetic")?;
        let needs_labels = d.model.head_kind().needs_discriminator();
        let labels = if labels.is_null() {
            if needs_labels {
                return Err(Fail::Status(
                    DissimStatus::InvalidInput,
                    format!("head {} needs labels", d.model.head_kind()),
                ));
            }
            None
        } else {
            Some(slice(labels, n_pairs * p * p, "labels")?)
        };
        let mut pairs = Vec::with_capacity(n_pairs);
        for k in 0..n_pairs {
            let l = labels.map(|l| &l[k * p * p..(k + 1) * p * p]);
            pairs.push((
                patch(&real[k * px..(k + 1) * px], l, p, k, Source::Real)?,
                patch(&synthetic[k * px..(k + 1) * px], l, p, k, Source::Synthetic)?,
            ));
        }
        let refs: Vec<(&Patch, &Patch)> = pairs.iter().map(|(a, b)| (a, b)).collect();
        let batch = PairBatch::from_patches(&refs, needs_labels.then_some(&d.classes))?;
        let y = d.model.forward(&batch)?;
        slice_mut(out, need, "out")?.copy_from_slice(&y.data[..need]);
        Ok(())
    })
}

/// Area under the ROC curve; `labels` are 0 (negative) or nonzero
/// (positive).
///
/// # Safety
/// `scores` and `labels` must be valid for `n` reads; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dissim_roc_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> DissimStatus {
    guard(|| {
        let s = slice(scores, n, "scores")?;
        let l: Vec<bool> = slice(labels, n, "labels")?.iter().map(|&v| v != 0).collect();
        let auc = roc_auc(s, &l)?.auc;
        *out.as_mut().ok_or_else(|| null("out"))? = auc;
        Ok(())
    })
}

/// Fraction of positions where two label arrays of length `n` differ.
///
/// # Safety
/// `a` and `b` must be valid for `n` reads; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dissim_semantic_difference(a: *const u8, b: *const u8, n: usize, out: *mut f64) -> DissimStatus {
    guard(|| {
        let a = Grid::from_vec(1, n, slice(a, n, "a")?.to_vec())?;
        let b = Grid::from_vec(1, n, slice(b, n, "b")?.to_vec())?;
        *out.as_mut().ok_or_else(|| null("out"))? = semantic_difference(&a, &b)?;
        Ok(())
    })
}

/// Per-pixel Shannon entropy (nats) of `n_pixels` distributions over
/// `n_classes` classes, stored pixel-major. Rows must sum to 1.
///
/// # Safety
/// `probs` must be valid for `n_pixels * n_classes` reads and `out` for
/// `n_pixels` writes.
#[no_mangle]
pub unsafe extern "C" fn dissim_entropy(
    probs: *const f32,
    n_pixels: usize,
    n_classes: usize,
    out: *mut f64,
) -> DissimStatus {
    guard(|| {
        if n_classes == 0 {
            return Err(Fail::Status(DissimStatus::InvalidInput, "n_classes is 0".into()));
        }
        let field = ProbField {
            height: 1,
            width: n_pixels,
            classes: n_classes,
            data: slice(probs, n_pixels * n_classes, "probs")?.to_vec(),
        };
        let ent = softmax_entropy_map(&field)?;
        slice_mut(out, n_pixels, "out")?.copy_from_slice(&ent.data);
        Ok(())
    })
}
