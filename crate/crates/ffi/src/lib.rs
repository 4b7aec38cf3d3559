//! C ABI over `sage-lod`.
//!
//! Every fallible function returns a [`SageStatus`]; on failure the message
//! is kept per thread and can be fetched with [`sage_last_error`]. Objects
//! cross the boundary as opaque handles that must be released with the
//! matching `*_free` function. Strings returned to the caller are freed
//! with [`sage_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sage_lod::lod::{self, LodCurveParams, Regime, SelectionMode, SelectionPlan};
use sage_lod::metrics::{self, QualityProfile};
use sage_lod::renderer::Image;
use sage_lod::splat_io::{self, SplatCloud};
use sage_lod::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SageStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Format = 3,
    Io = 4,
    InsufficientData = 5,
    DegenerateFit = 6,
    Composition = 7,
    Panic = 8,
}

impl From<&Error> for SageStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Format { .. }
            | Error::Schema(_)
            | Error::Validation { .. }
            | Error::Parse { .. }
            | Error::ImageFormat(_)
            | Error::Json(_)
            | Error::Csv(_) => SageStatus::Format,
            Error::Io { .. } => SageStatus::Io,
            Error::InsufficientData(_) => SageStatus::InsufficientData,
            Error::DegenerateFit(_) => SageStatus::DegenerateFit,
            Error::Composition(_) | Error::Catalog(_) | Error::Manifest(_) => {
                SageStatus::Composition
            }
            _ => SageStatus::InvalidArgument,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SageSelectionMode {
    Empirical = 0,
    Model = 1,
}

/// Two-regime curve; `beta` is +inf for single-regime fits.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SageCurve {
    pub k1: f64,
    pub gamma1: f64,
    pub mu1: f64,
    pub alpha1: f64,
    pub k2: f64,
    pub gamma2: f64,
    pub mu2: f64,
    pub alpha2: f64,
    pub beta: f64,
    pub rmse: f64,
    pub n_points: usize,
}

impl From<&LodCurveParams> for SageCurve {
    fn from(p: &LodCurveParams) -> Self {
        SageCurve {
            k1: p.k1,
            gamma1: p.gamma1,
            mu1: p.mu1,
            alpha1: p.alpha1,
            k2: p.k2,
            gamma2: p.gamma2,
            mu2: p.mu2,
            alpha2: p.alpha2,
            beta: p.beta,
            rmse: p.fit_rmse,
            n_points: p.n_points,
        }
    }
}

impl SageCurve {
    fn params(&self) -> LodCurveParams {
        let mut p = LodCurveParams::from_regimes(
            0,
            0,
            Regime {
                k: self.k1,
                gamma: self.gamma1,
                mu: self.mu1,
                alpha: self.alpha1,
            },
            Regime {
                k: self.k2,
                gamma: self.gamma2,
                mu: self.mu2,
                alpha: self.alpha2,
            },
            self.beta,
        );
        p.fit_rmse = self.rmse;
        p.n_points = self.n_points;
        p
    }
}

/// Opaque splat cloud.
pub struct SageCloud(SplatCloud);

/// Opaque quality profile.
pub struct SageProfile(QualityProfile);

/// Opaque selection plan.
pub struct SagePlan(SelectionPlan);

thread_local! {
    static LAST_ERROR: RefCell<Option<String>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg.into()));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: SageStatus, msg: impl Into<String>) -> SageStatus {
    set_error(msg);
    status
}

/// Runs `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), SageStatus>) -> SageStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SageStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(SageStatus::Panic, "internal panic"),
    }
}

fn check(r: sage_lod::Result<()>) -> Result<(), SageStatus> {
    r.map_err(|e| fail(SageStatus::from(&e), e.to_string()))
}

fn lift<T>(r: sage_lod::Result<T>) -> Result<T, SageStatus> {
    r.map_err(|e| fail(SageStatus::from(&e), e.to_string()))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, SageStatus> {
    if p.is_null() {
        return Err(fail(SageStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SageStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), SageStatus> {
    if p.is_null() {
        Err(fail(SageStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .map(CString::into_raw)
        .unwrap_or(ptr::null_mut())
}

/// Message of the last failed call on this thread, or NULL. Free with
/// [`sage_string_free`].
#[no_mangle]
pub extern "C" fn sage_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().clone().map_or(ptr::null_mut(), into_c_string))
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sage_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Bytes occupied by `count` gaussians (248 each).
#[no_mangle]
pub extern "C" fn sage_occupancy_bytes(count: u64) -> u64 {
    splat_io::occupancy_bytes(count)
}

/// Reads a 3DGS PLY file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sage_cloud_read(path: *const c_char, out: *mut *mut SageCloud) -> SageStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = str_arg(path, "path")?;
        let cloud = lift(splat_io::read_splat_ply(Path::new(path)))?;
        *out = Box::into_raw(Box::new(SageCloud(cloud)));
        Ok(())
    })
}

/// # Safety
/// `cloud` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sage_cloud_len(cloud: *const SageCloud, out: *mut usize) -> SageStatus {
    guard(|| {
        non_null(cloud, "cloud")?;
        non_null(out, "out")?;
        *out = (*cloud).0.len();
        Ok(())
    })
}

/// # Safety
/// `cloud` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sage_cloud_sh_degree(cloud: *const SageCloud, out: *mut u8) -> SageStatus {
    guard(|| {
        non_null(cloud, "cloud")?;
        non_null(out, "out")?;
        *out = (*cloud).0.sh_degree;
        Ok(())
    })
}

/// # Safety
/// `cloud` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sage_cloud_write(cloud: *const SageCloud, path: *const c_char) -> SageStatus {
    guard(|| {
        non_null(cloud, "cloud")?;
        let path = str_arg(path, "path")?;
        check(splat_io::save_splat_ply(Path::new(path), &(*cloud).0))
    })
}

/// # Safety
/// `cloud` must come from this library (or be NULL) and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sage_cloud_free(cloud: *mut SageCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Fits the two-regime curve to `n` (distance, ssim) pairs.
///
/// # Safety
/// `d` and `ssim` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sage_fit_curve(
    d: *const f64,
    ssim: *const f64,
    n: usize,
    out: *mut SageCurve,
) -> SageStatus {
    guard(|| {
        non_null(d, "d")?;
        non_null(ssim, "ssim")?;
        non_null(out, "out")?;
        let d = std::slice::from_raw_parts(d, n);
        let s = std::slice::from_raw_parts(ssim, n);
        let samples: Vec<(f64, f64)> = d.iter().copied().zip(s.iter().copied()).collect();
        let params = lift(lod::fit_lod_curve(0, 0, &samples))?;
        *out = SageCurve::from(&params);
        Ok(())
    })
}

/// Predicted SSIM at distance `d`, clamped to [0, 1]; NaN for a NULL curve.
///
/// # Safety
/// `curve` must be NULL or point to a valid struct.
#[no_mangle]
pub unsafe extern "C" fn sage_predict_ssim(curve: *const SageCurve, d: f64) -> f64 {
    if curve.is_null() {
        return f64::NAN;
    }
    lod::predict_ssim(&(*curve).params(), d)
}

unsafe fn image(rgb: *const f32, width: u32, height: u32, name: &str) -> Result<Image, SageStatus> {
    non_null(rgb, name)?;
    let n = 3 * width as usize * height as usize;
    Ok(Image {
        width,
        height,
        rgb: std::slice::from_raw_parts(rgb, n).to_vec(),
    })
}

/// SSIM of two interleaved RGB float images of the same size.
///
/// # Safety
/// `a` and `b` must each point to `3 * width * height` floats.
#[no_mangle]
pub unsafe extern "C" fn sage_ssim(
    a: *const f32,
    b: *const f32,
    width: u32,
    height: u32,
    out: *mut f64,
) -> SageStatus {
    guard(|| {
        non_null(out, "out")?;
        let a = image(a, width, height, "a")?;
        let b = image(b, width, height, "b")?;
        *out = lift(metrics::ssim(&a, &b))?;
        Ok(())
    })
}

/// Loads a profile written by `sage-lod profile` (JSON).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sage_profile_read(path: *const c_char, out: *mut *mut SageProfile) -> SageStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = str_arg(path, "path")?;
        let text = lift(std::fs::read_to_string(path).map_err(|e| Error::io(path, e)))?;
        let profile: QualityProfile = lift(serde_json::from_str(&text).map_err(Error::from))?;
        *out = Box::into_raw(Box::new(SageProfile(profile)));
        Ok(())
    })
}

/// # Safety
/// `profile` must come from this library (or be NULL) and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sage_profile_free(profile: *mut SageProfile) {
    if !profile.is_null() {
        drop(Box::from_raw(profile));
    }
}

/// Selects one iteration per label for `view`. Model mode fits curves
/// from the profile first.
///
/// # Safety
/// `profile` must be a live handle, `view` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sage_select(
    profile: *const SageProfile,
    view: *const c_char,
    target: f64,
    mode: SageSelectionMode,
    out: *mut *mut SagePlan,
) -> SageStatus {
    guard(|| {
        non_null(profile, "profile")?;
        non_null(out, "out")?;
        let view = str_arg(view, "view")?;
        let profile = &(*profile).0;
        let plan = match mode {
            SageSelectionMode::Empirical => lift(lod::select_iterations(
                profile,
                None,
                view,
                target,
                SelectionMode::Empirical,
            ))?,
            SageSelectionMode::Model => {
                let (curves, _) = lod::fit_profile(profile);
                lift(lod::select_iterations(
                    profile,
                    Some(&curves),
                    view,
                    target,
                    SelectionMode::Model,
                ))?
            }
        };
        *out = Box::into_raw(Box::new(SagePlan(plan)));
        Ok(())
    })
}

/// Total gaussians of a plan; 0 for NULL.
///
/// # Safety
/// `plan` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sage_plan_total_gaussians(plan: *const SagePlan) -> u64 {
    if plan.is_null() {
        0
    } else {
        (*plan).0.total_gaussians
    }
}

/// Total bytes of a plan; 0 for NULL.
///
/// # Safety
/// `plan` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sage_plan_total_bytes(plan: *const SagePlan) -> u64 {
    if plan.is_null() {
        0
    } else {
        (*plan).0.total_bytes
    }
}

/// Chosen iteration for `label`; `fallback` is set when no checkpoint met
/// the target.
///
/// # Safety
/// `plan` must be a live handle; `iteration` and `fallback` writable.
#[no_mangle]
pub unsafe extern "C" fn sage_plan_choice(
    plan: *const SagePlan,
    label: u8,
    iteration: *mut u32,
    fallback: *mut bool,
) -> SageStatus {
    guard(|| {
        non_null(plan, "plan")?;
        non_null(iteration, "iteration")?;
        non_null(fallback, "fallback")?;
        let choice = (*plan).0.choices.get(&label).ok_or_else(|| {
            fail(SageStatus::InvalidArgument, format!("label {label} not in plan"))
        })?;
        *iteration = choice.iteration;
        *fallback = choice.fallback;
        Ok(())
    })
}

/// Plan as JSON. Free with [`sage_string_free`]; NULL on failure.
///
/// # Safety
/// `plan` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sage_plan_to_json(plan: *const SagePlan) -> *mut c_char {
    if plan.is_null() {
        set_error("plan is null");
        return ptr::null_mut();
    }
    match serde_json::to_string(&(*plan).0) {
        Ok(s) => into_c_string(s),
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `plan` must come from this library (or be NULL) and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sage_plan_free(plan: *mut SagePlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}
