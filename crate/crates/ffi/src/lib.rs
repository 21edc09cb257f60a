//! C ABI over `dwglm`.
//!
//! Fallible functions return a [`DwglmStatus`]; on failure the message is
//! available from [`dwglm_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function. Strings returned by the
//! library are released with [`dwglm_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::ptr;

use dwglm::io::{read_dataset, AnalysisConfig};
use dwglm::simulation::{replication_dataset, Scenario, Study1Params, Study2bParams, StudyDesign};
use dwglm::{
    estimate_dtr, DtrEstimate, Error, EstimatorConfig, Link, LongitudinalDataset, Method,
    StageModelSpec,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DwglmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Domain = 6,
    NonConvergence = 7,
    Separation = 8,
    EmptyGroup = 9,
    Estimation = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DwglmLink {
    Logit = 0,
    Probit = 1,
    Cloglog = 2,
    Identity = 3,
}

impl From<DwglmLink> for Link {
    fn from(l: DwglmLink) -> Link {
        match l {
            DwglmLink::Logit => Link::Logit,
            DwglmLink::Probit => Link::Probit,
            DwglmLink::Cloglog => Link::Cloglog,
            DwglmLink::Identity => Link::Identity,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DwglmMethod {
    M0 = 0,
    M1 = 1,
    M2 = 2,
}

impl From<DwglmMethod> for Method {
    fn from(m: DwglmMethod) -> Method {
        match m {
            DwglmMethod::M0 => Method::M0,
            DwglmMethod::M1 => Method::M1,
            DwglmMethod::M2 => Method::M2,
        }
    }
}

/// Opaque dataset handle.
pub struct DwglmDataset {
    data: LongitudinalDataset,
    models: Vec<StageModelSpec>,
}

/// Opaque estimate handle.
pub struct DwglmEstimate {
    estimate: DtrEstimate,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(err: &Error) -> DwglmStatus {
    match err.root() {
        Error::Io { .. } => DwglmStatus::Io,
        Error::Parse { .. }
        | Error::MissingColumn(_)
        | Error::NonBinaryValue { .. }
        | Error::RaggedStages { .. }
        | Error::Csv(_)
        | Error::Json(_) => DwglmStatus::Parse,
        Error::Config(_) | Error::Usage(_) => DwglmStatus::Config,
        Error::Domain(_) | Error::DimensionMismatch(_) => DwglmStatus::Domain,
        Error::NonConvergence { .. } | Error::SingularJacobian { .. } => {
            DwglmStatus::NonConvergence
        }
        Error::Separation { .. } => DwglmStatus::Separation,
        Error::EmptyGroup { .. } => DwglmStatus::EmptyGroup,
        _ => DwglmStatus::Estimation,
    }
}

fn fail(err: Error) -> DwglmStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

/// Runs `f`, turning a panic into [`DwglmStatus::Panic`].
fn guard(f: impl FnOnce() -> DwglmStatus) -> DwglmStatus {
    std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|_| {
        set_error("internal panic");
        DwglmStatus::Panic
    })
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, DwglmStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(DwglmStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        DwglmStatus::InvalidArgument
    })
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! out_ptr {
    ($p:expr) => {
        if $p.is_null() {
            set_error(concat!(stringify!($p), " is null"));
            return DwglmStatus::NullPointer;
        }
    };
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dwglm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dwglm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Link-scale value `g(p)`. Requires `0 < p < 1`.
///
/// # Safety
/// `out` must be null or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn dwglm_link_g(link: DwglmLink, p: f64, out: *mut f64) -> DwglmStatus {
    out_ptr!(out);
    match Link::from(link).g(p) {
        Ok(v) => {
            *out = v;
            DwglmStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Inverse link `g⁻¹(eta)`.
///
/// # Safety
/// `out` must be null or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn dwglm_link_inverse(
    link: DwglmLink,
    eta: f64,
    out: *mut f64,
) -> DwglmStatus {
    out_ptr!(out);
    match Link::from(link).g_inv(eta) {
        Ok(v) => {
            *out = v;
            DwglmStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Derivative of the inverse link at `eta`.
///
/// # Safety
/// `out` must be null or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn dwglm_link_inverse_derivative(
    link: DwglmLink,
    eta: f64,
    out: *mut f64,
) -> DwglmStatus {
    out_ptr!(out);
    match Link::from(link).g_inv_prime(eta) {
        Ok(v) => {
            *out = v;
            DwglmStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// First-stage truth for study 2b. `theta` holds 9 values and `delta` two;
/// a null pointer selects the default values.
///
/// # Safety
/// Non-null array arguments must be readable for their stated lengths;
/// `out` must point to writable memory for two `double`s.
#[no_mangle]
pub unsafe extern "C" fn dwglm_true_psi1(
    theta: *const f64,
    delta: *const f64,
    out: *mut f64,
) -> DwglmStatus {
    out_ptr!(out);
    let mut params = Study2bParams::default();
    if !theta.is_null() {
        params
            .theta
            .copy_from_slice(std::slice::from_raw_parts(theta, 9));
    }
    if !delta.is_null() {
        params
            .delta
            .copy_from_slice(std::slice::from_raw_parts(delta, 2));
    }
    let (a, b) = dwglm::simulation::true_psi1_study2b(&params);
    *out = a;
    *out.add(1) = b;
    DwglmStatus::Ok
}

/// Reads a CSV described by a JSON analysis configuration. The configured
/// stage models are kept on the handle for [`dwglm_estimate`].
///
/// # Safety
/// `path` and `config_json` must be NUL-terminated strings; `out` must point
/// to writable memory for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn dwglm_dataset_read_csv(
    path: *const c_char,
    config_json: *const c_char,
    out: *mut *mut DwglmDataset,
) -> DwglmStatus {
    out_ptr!(out);
    *out = ptr::null_mut();
    let path = try_status!(str_arg(path, "path"));
    let json = try_status!(str_arg(config_json, "config_json"));
    guard(|| {
        let config: AnalysisConfig = match serde_json::from_str(json) {
            Ok(c) => c,
            Err(e) => return fail(e.into()),
        };
        if let Err(e) = config.validate() {
            return fail(e);
        }
        match read_dataset(&PathBuf::from(path), &config) {
            Ok(data) => {
                *out = Box::into_raw(Box::new(DwglmDataset {
                    data,
                    models: config.models,
                }));
                DwglmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Simulates a single-stage study-1 dataset. `scenario` is 1-4 and sets the
/// stored working models.
///
/// # Safety
/// `out` must point to writable memory for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn dwglm_dataset_simulate_study1(
    n: usize,
    scenario: u8,
    link: DwglmLink,
    seed: u64,
    out: *mut *mut DwglmDataset,
) -> DwglmStatus {
    out_ptr!(out);
    *out = ptr::null_mut();
    let scenario = match Scenario::try_from(scenario) {
        Ok(s) => s,
        Err(e) => {
            set_error(e.to_string());
            return DwglmStatus::InvalidArgument;
        }
    };
    if n == 0 {
        set_error("n must be at least 1");
        return DwglmStatus::InvalidArgument;
    }
    guard(|| {
        let design = StudyDesign::Study1 {
            params: Study1Params {
                n,
                link: link.into(),
                ..Default::default()
            },
            scenario,
        };
        *out = Box::into_raw(Box::new(DwglmDataset {
            data: replication_dataset(&design, seed, 0),
            models: design.specs(),
        }));
        DwglmStatus::Ok
    })
}

/// Number of subjects, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dwglm_dataset_n_subjects(dataset: *const DwglmDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.data.n_subjects())
}

/// Number of stages, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dwglm_dataset_n_stages(dataset: *const DwglmDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.data.n_stages())
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dwglm_dataset_free(dataset: *mut DwglmDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Estimates the regime with the dataset's stored models. `models_json`, if
/// non-null, is a JSON array of stage models that replaces them.
///
/// # Safety
/// `dataset` must be a live handle; `models_json` null or NUL-terminated;
/// `out` must point to writable memory for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn dwglm_estimate(
    dataset: *const DwglmDataset,
    models_json: *const c_char,
    method: DwglmMethod,
    link: DwglmLink,
    replicates: usize,
    seed: u64,
    out: *mut *mut DwglmEstimate,
) -> DwglmStatus {
    out_ptr!(out);
    *out = ptr::null_mut();
    let Some(dataset) = dataset.as_ref() else {
        set_error("dataset is null");
        return DwglmStatus::NullPointer;
    };
    let models: Vec<StageModelSpec> = if models_json.is_null() {
        dataset.models.clone()
    } else {
        let json = try_status!(str_arg(models_json, "models_json"));
        match serde_json::from_str(json) {
            Ok(m) => m,
            Err(e) => return fail(Error::from(e)),
        }
    };
    if replicates == 0 {
        set_error("replicates must be at least 1");
        return DwglmStatus::InvalidArgument;
    }
    guard(|| {
        let config = EstimatorConfig {
            method: method.into(),
            link: link.into(),
            replicates,
            seed,
            ..Default::default()
        };
        match estimate_dtr(&dataset.data, &models, &config) {
            Ok(estimate) => {
                *out = Box::into_raw(Box::new(DwglmEstimate { estimate }));
                DwglmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Number of stages, or 0 for a null handle.
///
/// # Safety
/// `estimate` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dwglm_estimate_n_stages(estimate: *const DwglmEstimate) -> usize {
    estimate.as_ref().map_or(0, |e| e.estimate.stages.len())
}

/// Number of blip coefficients at 1-based `stage`, or 0 if out of range.
///
/// # Safety
/// `estimate` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dwglm_estimate_psi_len(
    estimate: *const DwglmEstimate,
    stage: usize,
) -> usize {
    estimate
        .as_ref()
        .and_then(|e| e.estimate.stages.get(stage.wrapping_sub(1)))
        .map_or(0, |s| s.psi_hat.len())
}

/// Copies ψ̂ for 1-based `stage` into `buf`, which holds `len` doubles.
///
/// # Safety
/// `estimate` must be a live handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dwglm_estimate_psi(
    estimate: *const DwglmEstimate,
    stage: usize,
    buf: *mut f64,
    len: usize,
) -> DwglmStatus {
    out_ptr!(buf);
    let Some(est) = estimate.as_ref() else {
        set_error("estimate is null");
        return DwglmStatus::NullPointer;
    };
    let Some(s) = est.estimate.stages.get(stage.wrapping_sub(1)) else {
        set_error(format!(
            "stage {stage} is out of range 1..={}",
            est.estimate.stages.len()
        ));
        return DwglmStatus::InvalidArgument;
    };
    if len < s.psi_hat.len() {
        set_error(format!(
            "buffer holds {len} values, {} needed",
            s.psi_hat.len()
        ));
        return DwglmStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(s.psi_hat.as_ptr(), buf, s.psi_hat.len());
    DwglmStatus::Ok
}

/// The full estimate as JSON. Release with [`dwglm_string_free`].
///
/// # Safety
/// `estimate` must be a live handle; `out` writable for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dwglm_estimate_to_json(
    estimate: *const DwglmEstimate,
    out: *mut *mut c_char,
) -> DwglmStatus {
    out_ptr!(out);
    *out = ptr::null_mut();
    let Some(est) = estimate.as_ref() else {
        set_error("estimate is null");
        return DwglmStatus::NullPointer;
    };
    match serde_json::to_string(&est.estimate) {
        Ok(text) => {
            *out = CString::new(text).expect("JSON has no NUL").into_raw();
            DwglmStatus::Ok
        }
        Err(e) => fail(e.into()),
    }
}

/// # Safety
/// `estimate` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dwglm_estimate_free(estimate: *mut DwglmEstimate) {
    if !estimate.is_null() {
        drop(Box::from_raw(estimate));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dwglm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
