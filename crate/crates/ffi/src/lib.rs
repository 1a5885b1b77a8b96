//! C ABI for the `lorga` toolkit.
//!
//! Every entry point returns a [`LorgaStatus`]. Results are written through
//! out-pointers. Objects cross the boundary as opaque handles that the caller
//! releases with the matching `*_free` function. When a call fails, a
//! human-readable message is kept per thread and can be read with
//! [`lorga_last_error_message`] until the next failing call on that thread.
//!
//! Matrices are row-major `f64`. Data and target matrices passed to network
//! functions hold one sample per column.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lorga::ga_init::{lora_ga_initialize, GaInitConfig};
use lorga::linalg::io::{load_lga1, save_lga1};
use lorga::linalg::singular_values;
use lorga::nn::{Network, NetworkSpec};
use lorga::{Error, Matrix};

/// Status codes returned by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LorgaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NonFinite = 4,
    Convergence = 5,
    Io = 6,
    Internal = 7,
}

/// Opaque dense matrix.
pub struct LorgaMatrix(Matrix);

/// Opaque feed-forward network, possibly carrying low-rank adapters.
pub struct LorgaNetwork(Network);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    let c = CString::new(s).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> LorgaStatus {
    match err {
        Error::NonFinite { .. } | Error::NonFiniteGradient { .. } => LorgaStatus::NonFinite,
        Error::Shape { .. } => LorgaStatus::ShapeMismatch,
        Error::NoConvergence { .. } => LorgaStatus::Convergence,
        Error::Io(_) => LorgaStatus::Io,
        Error::InvalidArgument(_) | Error::Layer { .. } | Error::Parse { .. } | Error::Format(_) | Error::Json(_) => {
            LorgaStatus::InvalidArgument
        }
    }
}

struct Fail(LorgaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(LorgaStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LorgaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LorgaStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal error: {msg}"));
            LorgaStatus::Internal
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(LorgaStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn to_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s).map(CString::into_raw).map_err(|_| Fail(LorgaStatus::Internal, "string contains NUL".into()))
}

/// Message of the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lorga_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn lorga_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a `rows × cols` matrix from `rows * cols` row-major values.
/// `data` may be null only when the matrix is empty.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles, `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lorga_matrix_new(rows: usize, cols: usize, data: *const f64, out: *mut *mut LorgaMatrix) -> LorgaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let len = rows.checked_mul(cols).ok_or_else(|| Fail(LorgaStatus::InvalidArgument, "rows * cols overflows".into()))?;
        let values = if len == 0 {
            Vec::new()
        } else if data.is_null() {
            return Err(null("data"));
        } else {
            std::slice::from_raw_parts(data, len).to_vec()
        };
        let m = Matrix::from_vec(rows, cols, values)?;
        *out = Box::into_raw(Box::new(LorgaMatrix(m)));
        Ok(())
    })
}

/// Releases a matrix. Null is ignored.
///
/// # Safety
/// `m` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn lorga_matrix_free(m: *mut LorgaMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Writes the number of rows and columns.
///
/// # Safety
/// `m` must be a live handle; `rows` and `cols` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lorga_matrix_shape(m: *const LorgaMatrix, rows: *mut usize, cols: *mut usize) -> LorgaStatus {
    guard(|| {
        let m = deref(m, "matrix")?;
        *out_ref(rows, "rows")? = m.0.rows();
        *out_ref(cols, "cols")? = m.0.cols();
        Ok(())
    })
}

/// Copies the row-major entries into `out`, which must hold exactly
/// `rows * cols` doubles (`len` is checked).
///
/// # Safety
/// `m` must be a live handle; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lorga_matrix_copy_data(m: *const LorgaMatrix, out: *mut f64, len: usize) -> LorgaStatus {
    guard(|| {
        let m = deref(m, "matrix")?;
        let src = m.0.as_slice();
        if len != src.len() {
            return Err(Fail(LorgaStatus::ShapeMismatch, format!("buffer holds {len} values, matrix has {}", src.len())));
        }
        if len > 0 {
            if out.is_null() {
                return Err(null("out"));
            }
            std::slice::from_raw_parts_mut(out, len).copy_from_slice(src);
        }
        Ok(())
    })
}

/// Reads a matrix from a binary `LGA1` file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lorga_matrix_read_lga1(path: *const c_char, out: *mut *mut LorgaMatrix) -> LorgaStatus {
    guard(|| {
        let path = c_str(path, "path")?;
        let out = out_ref(out, "out")?;
        let m = load_lga1(path)?;
        *out = Box::into_raw(Box::new(LorgaMatrix(m)));
        Ok(())
    })
}

/// Writes a matrix to a binary `LGA1` file.
///
/// # Safety
/// `m` must be a live handle; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lorga_matrix_write_lga1(m: *const LorgaMatrix, path: *const c_char) -> LorgaStatus {
    guard(|| {
        let m = deref(m, "matrix")?;
        let path = c_str(path, "path")?;
        save_lga1(&m.0, path)?;
        Ok(())
    })
}

/// Singular values in descending order. `out` must hold `min(rows, cols)`
/// doubles; that count is written to `written`.
///
/// # Safety
/// `m` must be a live handle; `out` must point to `len` writable doubles and
/// `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lorga_matrix_singular_values(
    m: *const LorgaMatrix,
    out: *mut f64,
    len: usize,
    written: *mut usize,
) -> LorgaStatus {
    guard(|| {
        let m = deref(m, "matrix")?;
        let written = out_ref(written, "written")?;
        let k = m.0.rows().min(m.0.cols());
        if len < k {
            return Err(Fail(LorgaStatus::ShapeMismatch, format!("buffer holds {len} values, need {k}")));
        }
        let s = singular_values(&m.0)?;
        if !s.is_empty() {
            if out.is_null() {
                return Err(null("out"));
            }
            std::slice::from_raw_parts_mut(out, s.len()).copy_from_slice(&s);
        }
        *written = s.len();
        Ok(())
    })
}

/// Builds a network from a JSON spec such as
/// `{"layer_dims":[8,16,4],"activation":"tanh","loss":"mse","init_seed":0}`.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lorga_network_new(spec_json: *const c_char, out: *mut *mut LorgaNetwork) -> LorgaStatus {
    guard(|| {
        let json = c_str(spec_json, "spec_json")?;
        let out = out_ref(out, "out")?;
        let spec: NetworkSpec = serde_json::from_str(json).map_err(Error::from)?;
        let net = Network::new(spec)?;
        *out = Box::into_raw(Box::new(LorgaNetwork(net)));
        Ok(())
    })
}

/// Releases a network. Null is ignored.
///
/// # Safety
/// `net` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn lorga_network_free(net: *mut LorgaNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Network output for inputs `x` (`d_in × n`), as a new `d_out × n` matrix.
///
/// # Safety
/// `net` and `x` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lorga_network_forward(
    net: *const LorgaNetwork,
    x: *const LorgaMatrix,
    out: *mut *mut LorgaMatrix,
) -> LorgaStatus {
    guard(|| {
        let net = deref(net, "network")?;
        let x = deref(x, "x")?;
        let out = out_ref(out, "out")?;
        let y = net.0.predict(&x.0)?;
        *out = Box::into_raw(Box::new(LorgaMatrix(y)));
        Ok(())
    })
}

/// Mean loss over the columns of `x` against targets `t`.
///
/// # Safety
/// `net`, `x` and `t` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lorga_network_loss(
    net: *const LorgaNetwork,
    x: *const LorgaMatrix,
    t: *const LorgaMatrix,
    out: *mut f64,
) -> LorgaStatus {
    guard(|| {
        let net = deref(net, "network")?;
        let x = deref(x, "x")?;
        let t = deref(t, "t")?;
        let out = out_ref(out, "out")?;
        *out = net.0.loss(&x.0, &t.0)?;
        Ok(())
    })
}

/// Runs LoRA-GA initialization on a copy of `net`, estimating gradients
/// from a batch sampled out of the pool (`pool_x`, `pool_t`).
///
/// `config_json` configures the initialization, for example
/// `{"rank":4,"alpha":16,"gamma":16,"sampled_batch_size":32}`; null uses
/// the defaults. The adapted network is written to `out_net`. If
/// `out_report` is non-null it receives a JSON report that the caller
/// releases with [`lorga_string_free`].
///
/// # Safety
/// Handles must be live; `config_json` must be null or NUL-terminated;
/// `out_net` must be writable and `out_report` null or writable.
#[no_mangle]
pub unsafe extern "C" fn lorga_lora_ga_init(
    net: *const LorgaNetwork,
    config_json: *const c_char,
    pool_x: *const LorgaMatrix,
    pool_t: *const LorgaMatrix,
    out_net: *mut *mut LorgaNetwork,
    out_report: *mut *mut c_char,
) -> LorgaStatus {
    guard(|| {
        let net = deref(net, "network")?;
        let x = deref(pool_x, "pool_x")?;
        let t = deref(pool_t, "pool_t")?;
        let out_net = out_ref(out_net, "out_net")?;
        let cfg: GaInitConfig = if config_json.is_null() {
            GaInitConfig::default()
        } else {
            serde_json::from_str(c_str(config_json, "config_json")?).map_err(Error::from)?
        };
        let (adapted, report) = lora_ga_initialize(&net.0, &cfg, &x.0, &t.0)?;
        if let Some(slot) = out_report.as_mut() {
            let json = serde_json::to_string(&report).map_err(Error::from)?;
            *slot = to_c_string(json)?;
        }
        *out_net = Box::into_raw(Box::new(LorgaNetwork(adapted)));
        Ok(())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lorga_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
