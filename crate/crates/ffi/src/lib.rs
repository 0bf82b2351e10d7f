//! C ABI over `nfa_lab`.
//!
//! Conventions:
//! - Every fallible call returns an [`NfaStatus`]; results go through out-pointers.
//! - Objects are opaque handles created by `*_new`/constructor calls and
//!   released with the matching `*_free`. Freeing `NULL` is a no-op.
//! - After a non-`Ok` status, [`nfa_last_error`] describes the failure on the
//!   calling thread.
//! - Panics never cross the boundary; they surface as `NFA_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nfa_lab::harness::{self, ExperimentConfig};
use nfa_lab::init::{balance_report, default_uniform_init, force_balanced};
use nfa_lab::linalg::{cosine_similarity, matrix_power};
use nfa_lab::network::{agop_linear, neural_feature_matrix};
use nfa_lab::nfa::check_nfa_exact;
use nfa_lab::rng::seeded;
use nfa_lab::{Error, LinearStack, Matrix, SeededRng};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NfaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeError = 3,
    NotPsd = 4,
    NumericFailure = 5,
    ConfigInvalid = 6,
    Diverged = 7,
    Io = 8,
    Panic = 9,
}

/// Dense row-major matrix.
pub struct NfaMatrix(Matrix);

/// Stack of weight matrices.
pub struct NfaStack(LinearStack);

/// Seeded random generator.
pub struct NfaRng(SeededRng);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &Error) -> NfaStatus {
    match err {
        Error::ShapeMismatch(_) | Error::ShapeError(_) | Error::TooShallow(_) => NfaStatus::ShapeError,
        Error::NotPsd { .. } | Error::IndefiniteInput { .. } | Error::NotSymmetric { .. } => NfaStatus::NotPsd,
        Error::NonFinite | Error::ZeroMatrix | Error::NoConvergence(_) => NfaStatus::NumericFailure,
        Error::ConfigInvalid(_) | Error::Json(_) => NfaStatus::ConfigInvalid,
        Error::DivergenceDetected { .. } => NfaStatus::Diverged,
        Error::Io { .. } | Error::Csv(_) => NfaStatus::Io,
        _ => NfaStatus::InvalidArgument,
    }
}

/// Runs `body`, mapping errors and panics to a status and the last-error slot.
fn guard(body: impl FnOnce() -> Result<(), (NfaStatus, String)>) -> NfaStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => NfaStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            NfaStatus::Panic
        }
    }
}

fn lib<T>(r: nfa_lab::Result<T>) -> Result<T, (NfaStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (NfaStatus, String) {
    (NfaStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (NfaStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (NfaStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), (NfaStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nfa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nfa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- matrices ----

/// Copies `rows*cols` row-major values from `data` into a new matrix.
///
/// # Safety
/// `data` must point to `rows*cols` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfa_matrix_new(rows: usize, cols: usize, data: *const f64, out: *mut *mut NfaMatrix) -> NfaStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let len = rows.checked_mul(cols).ok_or((NfaStatus::InvalidArgument, "size overflow".into()))?;
        let values = std::slice::from_raw_parts(data, len).to_vec();
        put(out, NfaMatrix(lib(Matrix::from_vec(rows, cols, values))?))
    })
}

/// # Safety
/// `m` must be a live matrix handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn nfa_matrix_rows(m: *const NfaMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.rows())
}

/// # Safety
/// `m` must be a live matrix handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn nfa_matrix_cols(m: *const NfaMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.cols())
}

/// Copies the entries, row-major, into `buf` of capacity `len`.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn nfa_matrix_copy_data(m: *const NfaMatrix, buf: *mut f64, len: usize) -> NfaStatus {
    guard(|| {
        let m = deref(m, "matrix")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let src = m.0.as_slice();
        if len < src.len() {
            return Err((NfaStatus::InvalidArgument, format!("buffer holds {len} values, need {}", src.len())));
        }
        std::slice::from_raw_parts_mut(buf, src.len()).copy_from_slice(src);
        Ok(())
    })
}

/// # Safety
/// `m` must be a handle from this library, not yet freed, or NULL.
#[no_mangle]
pub unsafe extern "C" fn nfa_matrix_free(m: *mut NfaMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Real power of a symmetric positive semi-definite matrix.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfa_matrix_power(m: *const NfaMatrix, exponent: f64, out: *mut *mut NfaMatrix) -> NfaStatus {
    guard(|| {
        let m = deref(m, "matrix")?;
        put(out, NfaMatrix(lib(matrix_power(&m.0, exponent))?))
    })
}

/// Frobenius cosine similarity of two same-shape matrices.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfa_cosine_similarity(a: *const NfaMatrix, b: *const NfaMatrix, out: *mut f64) -> NfaStatus {
    guard(|| {
        let (a, b) = (deref(a, "a")?, deref(b, "b")?);
        let out = deref_mut(out, "out")?;
        *out = lib(cosine_similarity(&a.0, &b.0))?;
        Ok(())
    })
}

// ---- rng ----

#[no_mangle]
pub extern "C" fn nfa_rng_new(seed: u64) -> *mut NfaRng {
    Box::into_raw(Box::new(NfaRng(seeded(seed))))
}

/// # Safety
/// `r` must be a handle from this library, not yet freed, or NULL.
#[no_mangle]
pub unsafe extern "C" fn nfa_rng_free(r: *mut NfaRng) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

// ---- stacks ----

/// Uniform fan-in initialization for widths `d_1..d_{L+1}` (`n_widths = L+1`).
///
/// # Safety
/// `widths` must point to `n_widths` values; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn nfa_stack_uniform_init(
    widths: *const usize,
    n_widths: usize,
    rng: *mut NfaRng,
    out: *mut *mut NfaStack,
) -> NfaStatus {
    guard(|| {
        if widths.is_null() {
            return Err(null("widths"));
        }
        let widths = std::slice::from_raw_parts(widths, n_widths);
        let rng = deref_mut(rng, "rng")?;
        put(out, NfaStack(lib(default_uniform_init(widths, &mut rng.0))?))
    })
}

/// Balanced re-initialization of `stack` (the input is left untouched).
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfa_stack_force_balanced(
    stack: *const NfaStack,
    rng: *mut NfaRng,
    out: *mut *mut NfaStack,
) -> NfaStatus {
    guard(|| {
        let stack = deref(stack, "stack")?;
        let rng = deref_mut(rng, "rng")?;
        put(out, NfaStack(lib(force_balanced(&stack.0, &mut rng.0))?))
    })
}

/// Number of weight matrices; 0 for NULL.
///
/// # Safety
/// `stack` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn nfa_stack_depth(stack: *const NfaStack) -> usize {
    stack.as_ref().map_or(0, |s| s.0.depth())
}

/// Copy of weight `index` (0-based).
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfa_stack_weight(stack: *const NfaStack, index: usize, out: *mut *mut NfaMatrix) -> NfaStatus {
    guard(|| {
        let stack = deref(stack, "stack")?;
        if index >= stack.0.depth() {
            return Err((NfaStatus::InvalidArgument, format!("layer {index} out of range 0..{}", stack.0.depth())));
        }
        put(out, NfaMatrix(stack.0.weight(index).clone()))
    })
}

/// AGOP `JᵀJ` of the end-to-end linear map.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfa_stack_agop(stack: *const NfaStack, out: *mut *mut NfaMatrix) -> NfaStatus {
    guard(|| put(out, NfaMatrix(agop_linear(&deref(stack, "stack")?.0))))
}

/// First-layer Gram matrix `W₁ᵀW₁`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfa_stack_feature_matrix(stack: *const NfaStack, out: *mut *mut NfaMatrix) -> NfaStatus {
    guard(|| put(out, NfaMatrix(neural_feature_matrix(&deref(stack, "stack")?.0))))
}

/// Largest balancedness defect over adjacent layer pairs.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfa_stack_max_defect(stack: *const NfaStack, out: *mut f64) -> NfaStatus {
    guard(|| {
        let stack = deref(stack, "stack")?;
        let out = deref_mut(out, "out")?;
        *out = lib(balance_report(&stack.0))?.c_max;
        Ok(())
    })
}

/// `cos(W₁ᵀW₁, A^{1/L})` and whether the exact-alignment check passes at `tol`.
///
/// # Safety
/// Handles must be live; out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn nfa_stack_check_alignment(
    stack: *const NfaStack,
    tol: f64,
    cosine: *mut f64,
    satisfied: *mut bool,
) -> NfaStatus {
    guard(|| {
        let stack = deref(stack, "stack")?;
        let (cosine, satisfied) = (deref_mut(cosine, "cosine")?, deref_mut(satisfied, "satisfied")?);
        let verdict = lib(check_nfa_exact(&stack.0, tol))?;
        *cosine = verdict.cosine;
        *satisfied = verdict.satisfied;
        Ok(())
    })
}

/// # Safety
/// `s` must be a handle from this library, not yet freed, or NULL.
#[no_mangle]
pub unsafe extern "C" fn nfa_stack_free(s: *mut NfaStack) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

// ---- experiments ----

/// Runs the experiment described by the JSON config, writes its artifacts and
/// returns the run summary as a JSON string (release with [`nfa_string_free`]).
/// A diverged run still returns `Ok` with `"status": "nan"`.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `summary_json` writable.
#[no_mangle]
pub unsafe extern "C" fn nfa_run_experiment(config_json: *const c_char, summary_json: *mut *mut c_char) -> NfaStatus {
    guard(|| {
        if config_json.is_null() {
            return Err(null("config_json"));
        }
        if summary_json.is_null() {
            return Err(null("summary_json"));
        }
        let text = CStr::from_ptr(config_json)
            .to_str()
            .map_err(|e| (NfaStatus::ConfigInvalid, format!("config is not UTF-8: {e}")))?;
        let cfg = lib(ExperimentConfig::from_json(text))?;
        let summary = lib(harness::run(&cfg))?;
        let json = lib(serde_json::to_string(&summary).map_err(Error::from))?;
        *summary_json = CString::new(json).map_err(|e| (NfaStatus::InvalidArgument, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library, not yet freed, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn nfa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
