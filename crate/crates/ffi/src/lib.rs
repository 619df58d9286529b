//! C ABI over `adr_core`.
//!
//! Every fallible function returns an [`AdrStatus`]. On failure the message
//! is available from [`adr_last_error_message`] on the same thread until the
//! next failing call. Objects are opaque handles created by `*_new`/`*_load`
//! functions and released with the matching `*_free`. Strings returned to
//! the caller are released with [`adr_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use adr_core::config::ExperimentConfig;
use adr_core::continual::run;
use adr_core::evaluate::{avg_incremental_accuracy, final_accuracy, learning_accuracy, PerformanceMatrix};
use adr_core::ham::EncoderMemoryBank;
use adr_core::linalg::ridge_solve;
use adr_core::{AdrError, DenseMatrix};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Singular = 4,
    Io = 5,
    Parse = 6,
    Config = 7,
    Runtime = 8,
    Panic = 9,
}

/// Dense row-major matrix of `double`.
pub struct AdrMatrix(DenseMatrix);

/// Encoder memory bank loaded from a checkpoint directory.
pub struct AdrEncoderBank {
    bank: EncoderMemoryBank,
    gamma: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

fn status_of(err: &AdrError) -> AdrStatus {
    match err {
        AdrError::Shape { .. } | AdrError::EmptyMatrix => AdrStatus::Shape,
        AdrError::Singular { .. } | AdrError::NonFinite(_) => AdrStatus::Singular,
        AdrError::Io { .. } => AdrStatus::Io,
        AdrError::Parse { .. } | AdrError::Json(_) => AdrStatus::Parse,
        AdrError::Config(_) => AdrStatus::Config,
        _ => AdrStatus::Runtime,
    }
}

fn fail(status: AdrStatus, msg: impl Into<String>) -> AdrStatus {
    set_error(msg);
    status
}

fn from_core(err: AdrError) -> AdrStatus {
    fail(status_of(&err), err.to_string())
}

/// Runs `f`, turning a panic into [`AdrStatus::Panic`].
fn guard(f: impl FnOnce() -> AdrStatus) -> AdrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(AdrStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, AdrStatus> {
    if s.is_null() {
        return Err(fail(AdrStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(AdrStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Message of the last failure on this thread, or null if none. The pointer
/// stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn adr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn adr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `rows * cols` row-major values from `data` into a new matrix.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adr_matrix_new(rows: usize, cols: usize, data: *const f64, out: *mut *mut AdrMatrix) -> AdrStatus {
    guard(|| {
        if out.is_null() || (data.is_null() && rows * cols > 0) {
            return fail(AdrStatus::NullPointer, "adr_matrix_new: null pointer");
        }
        let Some(len) = rows.checked_mul(cols) else {
            return fail(AdrStatus::InvalidArgument, "adr_matrix_new: size overflows");
        };
        let values = if len == 0 { Vec::new() } else { std::slice::from_raw_parts(data, len).to_vec() };
        match DenseMatrix::from_vec(rows, cols, values) {
            Ok(m) => {
                *out = boxed(AdrMatrix(m));
                AdrStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// # Safety
/// `m` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn adr_matrix_free(m: *mut AdrMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn adr_matrix_rows(m: *const AdrMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.rows())
}

/// # Safety
/// `m` must be a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn adr_matrix_cols(m: *const AdrMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.cols())
}

/// Copies the row-major values into `out`, which holds `len` doubles.
///
/// # Safety
/// `m` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn adr_matrix_copy_data(m: *const AdrMatrix, out: *mut f64, len: usize) -> AdrStatus {
    guard(|| {
        let Some(m) = m.as_ref() else {
            return fail(AdrStatus::NullPointer, "adr_matrix_copy_data: null matrix");
        };
        let data = m.0.data();
        if len != data.len() {
            return fail(
                AdrStatus::Shape,
                format!("adr_matrix_copy_data: buffer holds {len}, matrix has {}", data.len()),
            );
        }
        if len > 0 {
            if out.is_null() {
                return fail(AdrStatus::NullPointer, "adr_matrix_copy_data: null buffer");
            }
            ptr::copy_nonoverlapping(data.as_ptr(), out, len);
        }
        AdrStatus::Ok
    })
}

/// Solves `(R + γI) W = Q` for symmetric PSD `R`.
///
/// # Safety
/// `r` and `q` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adr_ridge_solve(
    r: *const AdrMatrix,
    q: *const AdrMatrix,
    gamma: f64,
    out: *mut *mut AdrMatrix,
) -> AdrStatus {
    guard(|| {
        let (Some(r), Some(q)) = (r.as_ref(), q.as_ref()) else {
            return fail(AdrStatus::NullPointer, "adr_ridge_solve: null matrix");
        };
        if out.is_null() {
            return fail(AdrStatus::NullPointer, "adr_ridge_solve: null output");
        }
        match ridge_solve(&r.0, &q.0, gamma) {
            Ok(w) => {
                *out = boxed(AdrMatrix(w));
                AdrStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Loads an encoder bank checkpoint directory together with its recorded γ.
///
/// # Safety
/// `dir` must be a nul-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adr_encoder_bank_load(dir: *const c_char, out: *mut *mut AdrEncoderBank) -> AdrStatus {
    guard(|| {
        let dir = match str_arg(dir, "dir") {
            Ok(d) => d,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(AdrStatus::NullPointer, "adr_encoder_bank_load: null output");
        }
        match EncoderMemoryBank::load(dir) {
            Ok((bank, gamma)) => {
                *out = boxed(AdrEncoderBank { bank, gamma });
                AdrStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// # Safety
/// `b` must be null or a live bank handle.
#[no_mangle]
pub unsafe extern "C" fn adr_encoder_bank_free(b: *mut AdrEncoderBank) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// # Safety
/// `b` must be a live bank handle.
#[no_mangle]
pub unsafe extern "C" fn adr_encoder_bank_num_layers(b: *const AdrEncoderBank) -> usize {
    b.as_ref().map_or(0, |b| b.bank.num_layers())
}

/// # Safety
/// `b` must be a live bank handle.
#[no_mangle]
pub unsafe extern "C" fn adr_encoder_bank_task_count(b: *const AdrEncoderBank) -> usize {
    b.as_ref().map_or(0, |b| b.bank.task_count())
}

/// γ recorded in the checkpoint manifest.
///
/// # Safety
/// `b` must be a live bank handle.
#[no_mangle]
pub unsafe extern "C" fn adr_encoder_bank_gamma(b: *const AdrEncoderBank) -> f64 {
    b.as_ref().map_or(f64::NAN, |b| b.gamma)
}

/// Merged weight of layer `k` under ridge weight `gamma`.
///
/// # Safety
/// `b` must be a live bank handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adr_encoder_bank_merge_layer(
    b: *const AdrEncoderBank,
    gamma: f64,
    k: usize,
    out: *mut *mut AdrMatrix,
) -> AdrStatus {
    guard(|| {
        let Some(b) = b.as_ref() else {
            return fail(AdrStatus::NullPointer, "adr_encoder_bank_merge_layer: null bank");
        };
        if out.is_null() {
            return fail(AdrStatus::NullPointer, "adr_encoder_bank_merge_layer: null output");
        }
        if k >= b.bank.num_layers() {
            return fail(
                AdrStatus::InvalidArgument,
                format!("layer {k} out of range for {} layers", b.bank.num_layers()),
            );
        }
        match ridge_solve(b.bank.autocorrelation(k), b.bank.cross_correlation(k), gamma) {
            Ok(w) => {
                *out = boxed(AdrMatrix(w));
                AdrStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Runs the experiment described by `config_json` and returns its run record
/// as a JSON string in `out_json`. No files are written.
///
/// # Safety
/// `config_json` must be nul-terminated; `out_json` must be writable. The
/// returned string must be released with [`adr_string_free`].
#[no_mangle]
pub unsafe extern "C" fn adr_run_experiment(config_json: *const c_char, out_json: *mut *mut c_char) -> AdrStatus {
    guard(|| {
        let text = match str_arg(config_json, "config_json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        if out_json.is_null() {
            return fail(AdrStatus::NullPointer, "adr_run_experiment: null output");
        }
        let cfg = match ExperimentConfig::from_json(text) {
            Ok(c) => c,
            Err(e) => return from_core(e),
        };
        let record = match run(&cfg) {
            Ok(r) => r,
            Err(f) => return fail(status_of(&f.source), f.to_string()),
        };
        match serde_json::to_string(&record).map(CString::new) {
            Ok(Ok(s)) => {
                *out_json = s.into_raw();
                AdrStatus::Ok
            }
            _ => fail(AdrStatus::Runtime, "run record could not be serialized"),
        }
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn adr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Average incremental, final and learning accuracy of a lower-triangular
/// performance matrix passed as its rows concatenated: row `t` holds `t + 1`
/// values, `num_tasks * (num_tasks + 1) / 2` in total.
///
/// # Safety
/// `packed` must point to that many doubles; the three outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn adr_metrics_from_rows(
    packed: *const f64,
    num_tasks: usize,
    a_avg: *mut f64,
    a_f: *mut f64,
    a_l: *mut f64,
) -> AdrStatus {
    guard(|| {
        if packed.is_null() || a_avg.is_null() || a_f.is_null() || a_l.is_null() {
            return fail(AdrStatus::NullPointer, "adr_metrics_from_rows: null pointer");
        }
        let values = std::slice::from_raw_parts(packed, num_tasks * (num_tasks + 1) / 2);
        let mut rows = Vec::with_capacity(num_tasks);
        let mut at = 0;
        for t in 0..num_tasks {
            rows.push(values[at..at + t + 1].to_vec());
            at += t + 1;
        }
        let m = match PerformanceMatrix::from_rows(rows) {
            Ok(m) => m,
            Err(e) => return from_core(e),
        };
        let metrics = avg_incremental_accuracy(&m).and_then(|avg| Ok((avg, final_accuracy(&m)?, learning_accuracy(&m)?)));
        match metrics {
            Ok((avg, f, l)) => {
                *a_avg = avg;
                *a_f = f;
                *a_l = l;
                AdrStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}
