//! C interface to `gdid`.
//!
//! Every fallible function returns a [`GdidStatus`] code; on failure the
//! message is available from [`gdid_last_error`] on the same thread.
//! Handles are opaque and must be released with their `_free` function.
//! Strings returned by the library are released with [`gdid_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gdid::config::{run_estimate, EstimateConfig, EstimateOutput};
use gdid::panel::{parse_panel_csv, PanelSchema};
use gdid::staggered::parse_staggered_csv;
use gdid::GdidError;

/// Status codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GdidStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed data or configuration.
    InvalidInput = 3,
    EstimationFailed = 4,
    Panic = 5,
}

/// A parsed panel, kept as text plus its column mapping.
pub struct GdidDataset {
    csv: String,
    schema: PanelSchema,
    n_units: usize,
}

pub struct GdidResult {
    output: EstimateOutput,
}

/// Headline numbers of an estimate.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GdidSummary {
    pub tau_hat: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    pub n: u64,
    pub n_treated: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &GdidError) -> GdidStatus {
    if err.is_validation() {
        GdidStatus::InvalidInput
    } else {
        GdidStatus::EstimationFailed
    }
}

fn guard<F: FnOnce() -> Result<(), GdidStatus>>(f: F) -> GdidStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GdidStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            GdidStatus::Panic
        }
    }
}

fn fail(err: GdidError) -> GdidStatus {
    set_error(err.to_string());
    status_of(&err)
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn opt_str<'a>(p: *const c_char) -> Result<Option<&'a str>, GdidStatus> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p).to_str().map(Some).map_err(|_| {
        set_error("argument is not valid UTF-8");
        GdidStatus::InvalidUtf8
    })
}

unsafe fn req_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, GdidStatus> {
    opt_str(p)?.ok_or_else(|| {
        set_error(format!("{what} is null"));
        GdidStatus::NullPointer
    })
}

fn parse_json<T: serde::de::DeserializeOwned + Default>(text: Option<&str>) -> Result<T, GdidStatus> {
    match text {
        None => Ok(T::default()),
        Some(t) => serde_json::from_str(t).map_err(|e| fail(GdidError::InvalidConfig(e.to_string()))),
    }
}

/// Parses a panel CSV. `schema_json` may be null for the default long layout
/// (`unit,time,outcome,treatment,cov_*`). On success `*out` owns a new handle.
///
/// # Safety
/// `csv_text` must be a valid NUL-terminated string, `schema_json` null or
/// a valid string, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gdid_dataset_from_csv(
    csv_text: *const c_char,
    schema_json: *const c_char,
    out: *mut *mut GdidDataset,
) -> GdidStatus {
    guard(|| {
        if out.is_null() {
            set_error("out is null");
            return Err(GdidStatus::NullPointer);
        }
        *out = ptr::null_mut();
        let csv = req_str(csv_text, "csv_text")?;
        let schema: PanelSchema = parse_json(opt_str(schema_json)?)?;
        let n_units = match parse_panel_csv(csv, &schema) {
            Ok(ds) => ds.n_units(),
            Err(first) => match parse_staggered_csv(csv, &schema) {
                Ok(p) => p.n_units(),
                Err(_) => return Err(fail(first)),
            },
        };
        *out = Box::into_raw(Box::new(GdidDataset {
            csv: csv.to_string(),
            schema,
            n_units,
        }));
        Ok(())
    })
}

/// Number of units, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a handle from [`gdid_dataset_from_csv`].
#[no_mangle]
pub unsafe extern "C" fn gdid_dataset_n_units(ds: *const GdidDataset) -> u64 {
    ds.as_ref().map_or(0, |d| d.n_units as u64)
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gdid_dataset_free(ds: *mut GdidDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Runs an estimate. `config_json` is a JSON run configuration (null for
/// defaults: gDiD with one lag, ensemble learners, plug-in inference); its
/// `schema` field is ignored in favour of the dataset's.
///
/// # Safety
/// `ds` must be a live dataset handle, `config_json` null or a valid string,
/// and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gdid_estimate(
    ds: *const GdidDataset,
    config_json: *const c_char,
    out: *mut *mut GdidResult,
) -> GdidStatus {
    guard(|| {
        if out.is_null() || ds.is_null() {
            set_error("null handle or output pointer");
            return Err(GdidStatus::NullPointer);
        }
        *out = ptr::null_mut();
        let ds = &*ds;
        let mut cfg: EstimateConfig = parse_json(opt_str(config_json)?)?;
        cfg.schema = ds.schema.clone();
        let output = run_estimate(&cfg, &ds.csv).map_err(fail)?;
        *out = Box::into_raw(Box::new(GdidResult { output }));
        Ok(())
    })
}

/// # Safety
/// `res` must be a live result handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gdid_result_summary(res: *const GdidResult, out: *mut GdidSummary) -> GdidStatus {
    guard(|| {
        let (Some(r), false) = (res.as_ref(), out.is_null()) else {
            set_error("null handle or output pointer");
            return Err(GdidStatus::NullPointer);
        };
        let o = &r.output;
        *out = GdidSummary {
            tau_hat: o.tau_hat,
            se: o.se,
            ci_lower: o.ci.lower,
            ci_upper: o.ci.upper,
            level: o.ci.level,
            n: o.n as u64,
            n_treated: o.n_treated as u64,
        };
        Ok(())
    })
}

/// Full result as JSON; free with [`gdid_string_free`]. Null on failure.
///
/// # Safety
/// `res` must be null or a live result handle.
#[no_mangle]
pub unsafe extern "C" fn gdid_result_json(res: *const GdidResult) -> *mut c_char {
    let mut s = ptr::null_mut();
    guard(|| {
        let r = res.as_ref().ok_or_else(|| {
            set_error("result is null");
            GdidStatus::NullPointer
        })?;
        let json = r.output.to_json().map_err(fail)?;
        s = CString::new(json).map_err(|_| GdidStatus::Panic)?.into_raw();
        Ok(())
    });
    s
}

/// Number of influence entries (units, or clusters for clustered runs).
///
/// # Safety
/// `res` must be null or a live result handle.
#[no_mangle]
pub unsafe extern "C" fn gdid_result_influence_len(res: *const GdidResult) -> u64 {
    res.as_ref().map_or(0, |r| r.output.influence.len() as u64)
}

/// Copies up to `len` influence values into `buf` and returns how many were
/// written.
///
/// # Safety
/// `res` must be a live result handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn gdid_result_influence(res: *const GdidResult, buf: *mut f64, len: u64) -> u64 {
    let (Some(r), false) = (res.as_ref(), buf.is_null()) else {
        return 0;
    };
    let src = &r.output.influence;
    let k = src.len().min(len as usize);
    ptr::copy_nonoverlapping(src.as_ptr(), buf, k);
    k as u64
}

/// # Safety
/// `res` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gdid_result_free(res: *mut GdidResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Message for the last failure on this thread, or null. The pointer stays
/// valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn gdid_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gdid_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn gdid_version() -> *const c_char {
    static V: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version string"),
    };
    V.as_ptr()
}
