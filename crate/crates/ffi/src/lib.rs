//! C ABI over the drift-compensation library.
//!
//! Objects are opaque handles created by `*_new`/`*_load` functions and
//! released with the matching `*_free`. Every fallible call returns a
//! [`DcStatus`]; on failure a description is available from
//! [`dc_last_error_message`] on the same thread. Output pointers are written
//! only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use driftcomp::datamodel::{SensorFrame, TemperatureWindow};
use driftcomp::linalg::{Matrix, Vector};
use driftcomp::models::{load_model, read_model, DriftModel};
use driftcomp::pipeline::{CalibrationMatrix, CompensatorState};
use driftcomp::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Format = 5,
    Config = 6,
    Singular = 7,
    Divergence = 8,
    Panic = 9,
}

/// A loaded drift model.
pub struct DcModel {
    inner: Arc<DriftModel>,
}

/// A calibration matrix and offset.
pub struct DcCalibration {
    inner: CalibrationMatrix,
}

/// Streaming compensator state for one sensor.
pub struct DcCompensator {
    inner: CompensatorState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> DcStatus {
    match e {
        Error::RejectedInput(_) | Error::Validation { .. } | Error::Labeling(_) | Error::Usage(_) => {
            DcStatus::InvalidArgument
        }
        Error::Singular(_) => DcStatus::Singular,
        Error::Parse { .. } => DcStatus::Parse,
        Error::Config(_) => DcStatus::Config,
        Error::Divergence(_) => DcStatus::Divergence,
        Error::Format(_) => DcStatus::Format,
        Error::Io(_) => DcStatus::Io,
    }
}

/// Runs `f`, converting errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), (DcStatus, String)>) -> DcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DcStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DcStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (DcStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (DcStatus, String) {
    (DcStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, (DcStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| (DcStatus::InvalidArgument, "path is not valid UTF-8".to_string()))
}

unsafe fn array6<T: Copy>(p: *const T, what: &str) -> Result<[T; 6], (DcStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::array::from_fn(|i| *p.add(i)))
}

unsafe fn write6(out: *mut f64, v: [f64; 6]) {
    ptr::copy_nonoverlapping(v.as_ptr(), out, 6);
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn dc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model file written by `driftcomp train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_model_load(path: *const c_char, out: *mut *mut DcModel) -> DcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = load_model(path_arg(path)?).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(DcModel { inner: Arc::new(m) }));
        Ok(())
    })
}

/// Parses a model from an in-memory JSON document.
///
/// # Safety
/// `json` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_model_from_json(json: *const c_char, len: usize, out: *mut *mut DcModel) -> DcStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return Err(null("json or out"));
        }
        let bytes = std::slice::from_raw_parts(json.cast::<u8>(), len);
        let m = read_model(bytes).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(DcModel { inner: Arc::new(m) }));
        Ok(())
    })
}

/// # Safety
/// `m` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dc_model_free(m: *mut DcModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Window length the model expects; 0 for a NULL handle.
///
/// # Safety
/// `m` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_model_window(m: *const DcModel) -> usize {
    m.as_ref().map_or(0, |m| m.inner.window())
}

/// Family tag (`lsm`, `mlp`, `mlp-seq`, `tcn`, `gru`) as a static string, or
/// NULL for a NULL handle.
///
/// # Safety
/// `m` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_model_family(m: *const DcModel) -> *const c_char {
    let Some(m) = m.as_ref() else {
        return ptr::null();
    };
    let tag: &'static [u8] = match m.inner.family().tag() {
        "lsm" => b"lsm\0",
        "mlp" => b"mlp\0",
        "mlp-seq" => b"mlp-seq\0",
        "tcn" => b"tcn\0",
        _ => b"gru\0",
    };
    tag.as_ptr().cast()
}

/// Predicts drift for a temperature window, oldest sample first. Writes six
/// values (N, N, N, N·m, N·m, N·m) to `out_drift`.
///
/// # Safety
/// `temps` must point to `len` doubles and `out_drift` to six writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn dc_model_predict(
    m: *const DcModel,
    temps: *const f64,
    len: usize,
    out_drift: *mut f64,
) -> DcStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("model"))?;
        if temps.is_null() || out_drift.is_null() {
            return Err(null("temps or out_drift"));
        }
        let w = TemperatureWindow::new(std::slice::from_raw_parts(temps, len).to_vec()).map_err(lib_err)?;
        let d = m.inner.predict(&w).map_err(lib_err)?;
        write6(out_drift, d.to_array());
        Ok(())
    })
}

/// Default diagonal calibration from the sensor's full-scale ranges.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_calibration_default(out: *mut *mut DcCalibration) -> DcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(DcCalibration {
            inner: CalibrationMatrix::default(),
        }));
        Ok(())
    })
}

/// Calibration from a row-major 6×6 matrix and a 6-vector offset.
///
/// # Safety
/// `matrix` must point to 36 doubles, `offset` to 6, `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_calibration_new(
    matrix: *const f64,
    offset: *const f64,
    out: *mut *mut DcCalibration,
) -> DcStatus {
    guard(|| {
        if matrix.is_null() || offset.is_null() || out.is_null() {
            return Err(null("matrix, offset or out"));
        }
        let c = Matrix::new(6, 6, std::slice::from_raw_parts(matrix, 36).to_vec()).map_err(lib_err)?;
        let o = Vector::new(array6(offset, "offset")?.to_vec()).map_err(lib_err)?;
        let inner = CalibrationMatrix::new(c, o).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(DcCalibration { inner }));
        Ok(())
    })
}

/// Loads a calibration document.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_calibration_load(path: *const c_char, out: *mut *mut DcCalibration) -> DcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = CalibrationMatrix::load(path_arg(path)?).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(DcCalibration { inner }));
        Ok(())
    })
}

/// # Safety
/// `c` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dc_calibration_free(c: *mut DcCalibration) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Converts six raw ADC counts to a wrench.
///
/// # Safety
/// `adc` must point to six ints and `out_wrench` to six writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dc_calibration_apply(
    c: *const DcCalibration,
    adc: *const i32,
    out_wrench: *mut f64,
) -> DcStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| null("calibration"))?;
        if out_wrench.is_null() {
            return Err(null("out_wrench"));
        }
        let adc = array6(adc, "adc")?.map(f64::from);
        write6(out_wrench, c.inner.apply(&adc).to_array());
        Ok(())
    })
}

/// Creates a streaming compensator. `calib` may be NULL for the default
/// calibration; it is copied, so the caller keeps ownership. The model is
/// shared and may be freed independently.
///
/// # Safety
/// `model` must be a live handle, `calib` NULL or a live handle, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dc_compensator_new(
    model: *const DcModel,
    calib: *const DcCalibration,
    out: *mut *mut DcCompensator,
) -> DcStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cal = calib.as_ref().map_or_else(CalibrationMatrix::default, |c| c.inner.clone());
        *out = Box::into_raw(Box::new(DcCompensator {
            inner: CompensatorState::new(Arc::clone(&m.inner), cal),
        }));
        Ok(())
    })
}

/// # Safety
/// `c` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dc_compensator_free(c: *mut DcCompensator) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Clears the temperature history.
///
/// # Safety
/// `c` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_compensator_reset(c: *mut DcCompensator) -> DcStatus {
    guard(|| {
        c.as_mut().ok_or_else(|| null("compensator"))?.inner.reset();
        Ok(())
    })
}

/// Pushes one frame. Writes the compensated wrench and the predicted drift,
/// six doubles each; either output pointer may be NULL to skip it.
///
/// # Safety
/// `c` must be a live handle, `adc` must point to six ints, and non-NULL
/// outputs to six writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dc_compensator_push(
    c: *mut DcCompensator,
    time_s: f64,
    adc: *const i32,
    temp_c: f64,
    out_compensated: *mut f64,
    out_drift: *mut f64,
) -> DcStatus {
    guard(|| {
        let c = c.as_mut().ok_or_else(|| null("compensator"))?;
        let frame = SensorFrame {
            time_s,
            adc: array6(adc, "adc")?,
            temp_c,
        };
        let (comp, drift) = c.inner.push_frame(&frame).map_err(lib_err)?;
        if !out_compensated.is_null() {
            write6(out_compensated, comp.to_array());
        }
        if !out_drift.is_null() {
            write6(out_drift, drift.to_array());
        }
        Ok(())
    })
}

/// Frames pushed since creation or the last reset.
///
/// # Safety
/// `c` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_compensator_count(c: *const DcCompensator) -> u64 {
    c.as_ref().map_or(0, |c| c.inner.count_seen())
}
