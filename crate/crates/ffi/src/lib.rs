//! C interface to the vidmon engine.
//!
//! Objects cross the boundary as opaque handles created by `vm_*_new`-style
//! functions and released by the matching `vm_*_free`. Every fallible call
//! returns a [`VmStatus`]; on failure `vm_last_error` describes the problem
//! until the next call on the same thread. Strings returned to the caller
//! are NUL-terminated UTF-8 and must be released with `vm_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use vidmon::config::EngineConfig;
use vidmon::estimators::{cv_estimate, mcv_estimate, CvEstimate, PairedSample};
use vidmon::model::{ClassTable, FrameAnnotation, RegionSet};
use vidmon::query::{parse_query, print_query, QueryAst};
use vidmon::Error;

/// Result of an FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VmStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Bad configuration or class table.
    Config = 3,
    /// The query failed to parse or does not fit the operation.
    Query = 4,
    /// Annotation input could not be read or is malformed.
    Data = 5,
    /// The sample cannot support the requested estimate.
    Estimation = 6,
    /// Some other argument is out of range.
    InvalidArgument = 7,
    /// The library hit an internal error. The handles passed in remain
    /// valid but their results should not be trusted.
    Internal = 8,
}

/// Summary of a control-variate estimate.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VmCvResult {
    pub estimate: f64,
    /// Estimated variance of `estimate`.
    pub variance_of_mean: f64,
    pub r_squared: f64,
    /// Plain-mean variance over control-variate variance; infinite when the
    /// controls explain the response exactly.
    pub variance_reduction_factor: f64,
    pub n: usize,
}

pub struct VmEngine {
    config: EngineConfig,
    classes: ClassTable,
    regions: RegionSet,
}

pub struct VmQuery {
    ast: QueryAst,
}

pub struct VmStream {
    frames: Vec<FrameAnnotation>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> VmStatus {
    match e {
        Error::Config(_) | Error::InvalidClassTable(_) | Error::UnknownClassLabel(_) => VmStatus::Config,
        Error::Query(_) | Error::QueryShape(_) => VmStatus::Query,
        Error::Annotation { .. } | Error::Io { .. } | Error::InvalidBox(_) => VmStatus::Data,
        Error::InsufficientSample(_)
        | Error::DegenerateControl(_)
        | Error::IllConditioned { .. }
        | Error::Sampling(_)
        | Error::ZeroCost => VmStatus::Estimation,
        Error::UnknownClassId { .. }
        | Error::InvalidParameter(_)
        | Error::GridMismatch(..)
        | Error::LengthMismatch(..) => VmStatus::InvalidArgument,
    }
}

struct Fail(VmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(VmStatus::NullArgument, format!("`{what}` is null"))
}

// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> VmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VmStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            VmStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(VmStatus::InvalidUtf8, format!("`{what}` is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

fn c_string(s: String) -> *mut c_char {
    CString::new(s).expect("library output has no interior NUL").into_raw()
}

/// Creates an engine from TOML configuration text, or from the defaults
/// when `config_toml` is null.
///
/// # Safety
/// `config_toml` is null or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn vm_engine_new(config_toml: *const c_char, out: *mut *mut VmEngine) -> VmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = if config_toml.is_null() { "" } else { str_arg(config_toml, "config_toml")? };
        let config = EngineConfig::from_toml_str(text, &[])?;
        let classes = config.class_table()?;
        let regions = config.region_set()?;
        put(out, VmEngine { config, classes, regions });
        Ok(())
    })
}

/// # Safety
/// `engine` is null or a handle from `vm_engine_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vm_engine_free(engine: *mut VmEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Parses one query against the engine's classes and regions.
///
/// # Safety
/// `engine` is a live handle, `text` a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vm_query_parse(engine: *const VmEngine, text: *const c_char, out: *mut *mut VmQuery) -> VmStatus {
    guard(|| {
        let engine = ref_arg(engine, "engine")?;
        let text = str_arg(text, "text")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let ast = parse_query(text, &engine.classes, &engine.regions).map_err(Error::from)?;
        put(out, VmQuery { ast });
        Ok(())
    })
}

/// Canonical text of a parsed query.
///
/// # Safety
/// `engine` and `query` are live handles; `out` is writable. Free the
/// result with `vm_string_free`.
#[no_mangle]
pub unsafe extern "C" fn vm_query_to_string(engine: *const VmEngine, query: *const VmQuery, out: *mut *mut c_char) -> VmStatus {
    guard(|| {
        let engine = ref_arg(engine, "engine")?;
        let query = ref_arg(query, "query")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = c_string(print_query(&query.ast, &engine.classes));
        Ok(())
    })
}

/// # Safety
/// `query` is null or a handle from `vm_query_parse` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vm_query_free(query: *mut VmQuery) {
    if !query.is_null() {
        drop(Box::from_raw(query));
    }
}

/// Generates the engine's configured synthetic stream.
///
/// # Safety
/// `engine` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn vm_stream_simulate(engine: *const VmEngine, out: *mut *mut VmStream) -> VmStatus {
    guard(|| {
        let engine = ref_arg(engine, "engine")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let frames = vidmon::sim::generate(&engine.config.stream_config(), &engine.classes)?;
        put(out, VmStream { frames });
        Ok(())
    })
}

/// Reads a line-delimited JSON annotation file.
///
/// # Safety
/// `engine` is a live handle, `path` a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vm_stream_read(engine: *const VmEngine, path: *const c_char, out: *mut *mut VmStream) -> VmStatus {
    guard(|| {
        let engine = ref_arg(engine, "engine")?;
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let frames = vidmon::io::read_annotations(Path::new(path), &engine.classes)?;
        put(out, VmStream { frames });
        Ok(())
    })
}

/// Number of frames in the stream; 0 for a null handle.
///
/// # Safety
/// `stream` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vm_stream_len(stream: *const VmStream) -> usize {
    stream.as_ref().map_or(0, |s| s.frames.len())
}

/// # Safety
/// `stream` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vm_stream_free(stream: *mut VmStream) {
    if !stream.is_null() {
        drop(Box::from_raw(stream));
    }
}

/// Runs a query over a stream with the engine's configured filter and
/// writes the result records, one JSON object per line, to `out`.
///
/// # Safety
/// All handles are live; `out` is writable. Free the result with
/// `vm_string_free`.
#[no_mangle]
pub unsafe extern "C" fn vm_run(
    engine: *const VmEngine,
    query: *const VmQuery,
    stream: *const VmStream,
    out: *mut *mut c_char,
) -> VmStatus {
    guard(|| {
        let engine = ref_arg(engine, "engine")?;
        let query = ref_arg(query, "query")?;
        let stream = ref_arg(stream, "stream")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut buf = Vec::new();
        vidmon::cli::cmd_run(&engine.config, &engine.classes, &query.ast, &stream.frames, &mut buf)?;
        *out = c_string(String::from_utf8(buf).expect("records are UTF-8"));
        Ok(())
    })
}

fn fill(est: CvEstimate, beta_out: *mut f64, out: *mut VmCvResult) {
    // SAFETY: callers checked `out`; `beta_out` is null or holds `beta.len()` slots.
    unsafe {
        if !beta_out.is_null() {
            ptr::copy_nonoverlapping(est.beta.as_ptr(), beta_out, est.beta.len());
        }
        *out = VmCvResult {
            estimate: est.estimate,
            variance_of_mean: est.sample_variance_of_mean,
            r_squared: est.r_squared,
            variance_reduction_factor: est.variance_reduction_factor,
            n: est.n,
        };
    }
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Single control variate estimate of the mean of `y` using control `x`
/// with known mean `mu_x`. `beta_out` may be null.
///
/// # Safety
/// `y` and `x` point to `n` doubles; `beta_out` is null or points to one
/// writable double; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn vm_cv_estimate(
    y: *const f64,
    x: *const f64,
    n: usize,
    mu_x: f64,
    beta_out: *mut f64,
    out: *mut VmCvResult,
) -> VmStatus {
    guard(|| {
        let y = slice_arg(y, n, "y")?;
        let x = slice_arg(x, n, "x")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let est = cv_estimate(&PairedSample::single(y.to_vec(), x, mu_x)?)?;
        fill(est, beta_out, out);
        Ok(())
    })
}

/// Multiple control variate estimate. `z` holds `n` rows of `d` controls in
/// row-major order and `mu_z` their `d` known means. `beta_out` may be null.
///
/// # Safety
/// `y` points to `n` doubles, `z` to `n * d`, `mu_z` to `d`; `beta_out` is
/// null or points to `d` writable doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn vm_mcv_estimate(
    y: *const f64,
    z: *const f64,
    n: usize,
    d: usize,
    mu_z: *const f64,
    beta_out: *mut f64,
    out: *mut VmCvResult,
) -> VmStatus {
    guard(|| {
        let cells = n.checked_mul(d).ok_or_else(|| Fail(VmStatus::InvalidArgument, "n * d overflows".into()))?;
        let y = slice_arg(y, n, "y")?;
        let z = slice_arg(z, cells, "z")?;
        let mu = slice_arg(mu_z, d, "mu_z")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if d == 0 {
            return Err(Fail(VmStatus::InvalidArgument, "need at least one control".into()));
        }
        let rows: Vec<Vec<f64>> = z.chunks(d).map(<[f64]>::to_vec).collect();
        let est = mcv_estimate(&PairedSample::new(y.to_vec(), &rows, mu.to_vec())?)?;
        fill(est, beta_out, out);
        Ok(())
    })
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn vm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` is null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
