//! C ABI over the latent-cluster engine.
//!
//! Every fallible function returns an [`LcStatus`]; on failure a message is
//! kept per thread and read with [`lc_last_error_message`]. Panics never
//! cross the boundary: they surface as `LC_STATUS_INTERNAL`.
//!
//! Arrays are passed as pointer plus element counts. Row-major throughout.
//! Label arrays are `uint32_t`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use latent_cluster::cluster::{kmeans_fit, KMeansConfig};
use latent_cluster::eval::{MetricsReport, NmiVariant, ReportOptions};
use latent_cluster::model::{load_checkpoint_with_latent, Autoencoder, IMAGE_SIDE};
use latent_cluster::{Error, Tensor};

const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Io = 4,
    Checkpoint = 5,
    InsufficientData = 6,
    UndefinedMetric = 7,
    Internal = 8,
}

/// Scores of one clustering against ground truth.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LcMetrics {
    pub silhouette: f64,
    pub davies_bouldin: f64,
    pub calinski_harabasz: f64,
    pub nmi: f64,
    pub ari: f64,
    pub aligned_accuracy: f64,
}

/// A trained autoencoder. Opaque to C; create with [`lc_model_load`],
/// release with [`lc_model_free`].
pub struct LcModel {
    inner: Autoencoder<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(LcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Dimension(_) => LcStatus::Dimension,
            Error::Io { .. } | Error::Idx { .. } => LcStatus::Io,
            Error::Checkpoint(_) => LcStatus::Checkpoint,
            Error::InsufficientData(_) | Error::EmptyBatch => LcStatus::InsufficientData,
            Error::UndefinedMetric(_) | Error::DegenerateBatch(_) => LcStatus::UndefinedMetric,
            Error::Config(_) | Error::Contract(_) => LcStatus::InvalidArgument,
            _ => LcStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(LcStatus::InvalidArgument, msg.into())
}

fn null(name: &str) -> Failure {
    Failure(LcStatus::NullPointer, format!("{name} is null"))
}

/// Run `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LcStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_last_error(format!("internal error: {msg}"));
            LcStatus::Internal
        }
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if ptr.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for `len` writes.
unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if ptr.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

fn checked_len(n: usize, d: usize) -> Result<usize, Failure> {
    n.checked_mul(d).ok_or_else(|| invalid("array size overflows"))
}

fn labels(raw: &[u32]) -> Vec<usize> {
    raw.iter().map(|&l| l as usize).collect()
}

/// Message for the last failed call on this thread, or null after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn lc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a checkpoint. `latent_dim` is the embedding width it was trained
/// with (64 by default). On success `*out` owns a new model.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_model_load(path: *const c_char, latent_dim: usize, out: *mut *mut LcModel) -> LcStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        if latent_dim == 0 {
            return Err(invalid("latent_dim must be positive"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let ckpt = load_checkpoint_with_latent(Path::new(path), latent_dim)?;
        *out = Box::into_raw(Box::new(LcModel { inner: ckpt.model }));
        Ok(())
    })
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`lc_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn lc_model_free(model: *mut LcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Embedding width, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lc_model_latent_dim(model: *const LcModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.latent_dim())
}

/// Trainable parameter count, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lc_model_parameter_count(model: *const LcModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.count_parameters())
}

/// Embed `n` 28x28 images (`n * 784` floats in [0, 1]) into `out`
/// (`out_len` must equal `n * latent_dim`). Rows of `out` are unit-norm.
///
/// # Safety
/// `images` must hold `n * 784` floats; `out` must hold `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn lc_model_encode(
    model: *const LcModel,
    images: *const f32,
    n: usize,
    out: *mut f32,
    out_len: usize,
) -> LcStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if n == 0 {
            return Err(invalid("n must be positive"));
        }
        let expected = checked_len(n, model.inner.latent_dim())?;
        if out_len != expected {
            return Err(invalid(format!("out_len is {out_len}, expected {expected}")));
        }
        let pixels = slice(images, checked_len(n, PIXELS)?, "images")?;
        let out = slice_mut(out, out_len, "out")?;
        let x = Tensor::new(&[n, 1, IMAGE_SIDE, IMAGE_SIDE], pixels.to_vec())?;
        let z = model.inner.encode(&x)?;
        out.copy_from_slice(z.data());
        Ok(())
    })
}

/// KMeans (k-means++ seeding, Lloyd iterations) on `x[n, d]`. Writes one
/// cluster id in `0..k` per row to `assignments` and, if non-null, the
/// final inertia to `inertia`.
///
/// # Safety
/// `x` must hold `n * d` doubles; `assignments` must hold `n` values;
/// `inertia` must be null or writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn lc_kmeans(
    x: *const f64,
    n: usize,
    d: usize,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
    assignments: *mut u32,
    inertia: *mut f64,
) -> LcStatus {
    guard(|| {
        let data = slice(x, checked_len(n, d)?, "x")?;
        let assignments = slice_mut(assignments, n, "assignments")?;
        let x = Tensor::new(&[n, d], data.to_vec())?;
        let fit = kmeans_fit(&x, &KMeansConfig { k, seed, max_iter, tol })?;
        for (dst, &a) in assignments.iter_mut().zip(&fit.assignments) {
            *dst = a as u32;
        }
        if !inertia.is_null() {
            *inertia = fit.inertia;
        }
        Ok(())
    })
}

/// Score a clustering of `x[n, d]`: internal metrics from `clusters`,
/// external ones against `truth`. `k` is the cluster count used for
/// alignment. NMI uses the geometric normaliser when `nmi_geometric` is
/// true, else the arithmetic one.
///
/// # Safety
/// `x` must hold `n * d` doubles; `clusters` and `truth` must hold `n`
/// values; `out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn lc_metrics(
    x: *const f64,
    n: usize,
    d: usize,
    clusters: *const u32,
    truth: *const u32,
    k: usize,
    nmi_geometric: bool,
    out: *mut LcMetrics,
) -> LcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let data = slice(x, checked_len(n, d)?, "x")?;
        let clusters = labels(slice(clusters, n, "clusters")?);
        let truth = labels(slice(truth, n, "truth")?);
        let x = Tensor::new(&[n, d], data.to_vec())?;
        let opts = ReportOptions {
            k,
            nmi_variant: if nmi_geometric { NmiVariant::Geometric } else { NmiVariant::Arithmetic },
            silhouette_sample: None,
            seed: 0,
        };
        let r = MetricsReport::compute(&x, &clusters, &truth, &opts)?;
        *out = LcMetrics {
            silhouette: r.silhouette,
            davies_bouldin: r.davies_bouldin,
            calinski_harabasz: r.calinski_harabasz,
            nmi: r.nmi,
            ari: r.ari,
            aligned_accuracy: r.aligned_accuracy,
        };
        Ok(())
    })
}

/// Adjusted Rand index between two labelings of length `n`.
///
/// # Safety
/// `a` and `b` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_ari(a: *const u32, b: *const u32, n: usize, out: *mut f64) -> LcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let a = labels(slice(a, n, "a")?);
        let b = labels(slice(b, n, "b")?);
        *out = latent_cluster::eval::ari(&a, &b)?;
        Ok(())
    })
}
