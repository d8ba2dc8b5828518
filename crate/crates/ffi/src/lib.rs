//! C ABI over `powerlaw-dynamics`.
//!
//! Every fallible call returns a [`PldStatus`]; on failure the message is
//! available from [`pld_last_error`] on the same thread until the next
//! failing call. Objects are opaque handles released with their `_free`
//! function. Matrices are row-major `dim * dim` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use powerlaw_dynamics::cli::config::{decoupled, parse};
use powerlaw_dynamics::cli::run::{check, execute, resolve, Artifacts};
use powerlaw_dynamics::exit::{
    exit_time_mc, exit_time_ode_oracle, exit_time_quadrature, Crossing, Domain, ExitMcOptions, ExitProblem,
};
use powerlaw_dynamics::model::{ergodicity_check, DecoupledParams, FullParams, Model};
use powerlaw_dynamics::simulate::{simulate_batch, SimConfig, TrajectoryBatch};
use powerlaw_dynamics::stationary::{density, normalizing_constant, ZMethod};
use powerlaw_dynamics::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PldStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad parameters or configuration.
    InvalidArgument = 2,
    /// Overflow, all paths censored, singular systems and similar.
    Numerical = 3,
    BufferTooSmall = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PldCrossing {
    GridOnly = 0,
    BrownianBridge = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PldZMethod {
    Quadrature = 0,
    ClosedForm = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PldExitEstimate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_exited: u64,
    pub n_censored: u64,
    /// Non-zero when censored paths make `mean` a lower bound.
    pub censored_lower_bound: i32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PldSimConfig {
    pub step: f64,
    pub horizon: f64,
    pub n_paths: u64,
    pub base_seed: u64,
    pub record_stride: u64,
}

/// Opaque model handle.
pub struct PldModel(Model);

/// Opaque batch of recorded paths.
pub struct PldTrajectories(TrajectoryBatch);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let mut bytes = msg.into();
    bytes.retain(|&b| b != 0);
    let s = CString::new(bytes).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(s));
}

enum Failure {
    Null(&'static str),
    Core(Error),
    Buffer(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PldStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PldStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            PldStatus::NullPointer
        }
        Ok(Err(Failure::Buffer(need))) => {
            set_error(format!("buffer too small: {need} values needed"));
            PldStatus::BufferTooSmall
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            if e.is_validation() {
                PldStatus::InvalidArgument
            } else {
                PldStatus::Numerical
            }
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            PldStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn matrix(p: *const f64, dim: usize, what: &'static str) -> Result<Vec<Vec<f64>>, Failure> {
    Ok(slice(p, dim * dim, what)?.chunks(dim).map(<[f64]>::to_vec).collect())
}

unsafe fn model_ref<'a>(m: *const PldModel) -> Result<&'a Model, Failure> {
    m.as_ref().map(|m| &m.0).ok_or(Failure::Null("model"))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

fn interval(a: f64, b: f64) -> Domain {
    Domain::Interval { a, b }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pld_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pld_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Model with per-coordinate `h`, `sigma`, `rho` of length `dim`.
///
/// # Safety
/// Input arrays must hold `dim` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pld_model_decoupled_new(
    h: *const f64,
    sigma: *const f64,
    rho: *const f64,
    dim: usize,
    eta: f64,
    out: *mut *mut PldModel,
) -> PldStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let p = DecoupledParams::new(
            slice(h, dim, "h")?.to_vec(),
            slice(sigma, dim, "sigma")?.to_vec(),
            slice(rho, dim, "rho")?.to_vec(),
            eta,
        )?;
        *out = Box::into_raw(Box::new(PldModel(Model::Decoupled(p))));
        Ok(())
    })
}

/// Model with full matrices. `w_star` may be null (origin).
///
/// # Safety
/// Matrices must hold `dim * dim` values, `w_star` (if non-null) `dim`.
#[no_mangle]
pub unsafe extern "C" fn pld_model_full_new(
    hessian: *const f64,
    sigma_g: *const f64,
    sigma_h: *const f64,
    w_star: *const f64,
    dim: usize,
    eta: f64,
    out: *mut *mut PldModel,
) -> PldStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let w = if w_star.is_null() { vec![0.0; dim] } else { slice(w_star, dim, "w_star")?.to_vec() };
        let p = FullParams::new(
            &matrix(hessian, dim, "hessian")?,
            &matrix(sigma_g, dim, "sigma_g")?,
            &matrix(sigma_h, dim, "sigma_h")?,
            w,
            eta,
        )?;
        *out = Box::into_raw(Box::new(PldModel(Model::Full(p))));
        Ok(())
    })
}

/// # Safety
/// `model` must come from a `pld_model_*_new` call and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pld_model_free(model: *mut PldModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn pld_model_dim(model: *const PldModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.dim())
}

/// Tail index of coordinate `coord` of the decoupled form.
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pld_model_tail_index(model: *const PldModel, coord: usize, out: *mut f64) -> PldStatus {
    guard(|| {
        let p = decoupled(model_ref(model)?)?;
        let out = out_ref(out, "out")?;
        if coord >= p.dim() {
            return Err(Error::InvalidParams(format!("coordinate {coord} out of range")).into());
        }
        *out = p.coord(coord).tail_index().ok_or(Error::TailIndexUndefined { coord })?;
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn pld_model_ergodicity(
    model: *const PldModel,
    pass: *mut i32,
    threshold: *mut f64,
) -> PldStatus {
    guard(|| {
        let c = ergodicity_check(model_ref(model)?);
        *out_ref(pass, "pass")? = c.pass as i32;
        *out_ref(threshold, "threshold")? = c.threshold;
        Ok(())
    })
}

/// Stationary density of coordinate `coord` at `x`.
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pld_stationary_density(
    model: *const PldModel,
    coord: usize,
    x: f64,
    out: *mut f64,
) -> PldStatus {
    guard(|| {
        let p = decoupled(model_ref(model)?)?;
        *out_ref(out, "out")? = density(&p, coord, x)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pld_normalizing_constant(
    model: *const PldModel,
    coord: usize,
    method: PldZMethod,
    out: *mut f64,
) -> PldStatus {
    guard(|| {
        let p = decoupled(model_ref(model)?)?;
        let m = match method {
            PldZMethod::Quadrature => ZMethod::Quadrature,
            PldZMethod::ClosedForm => ZMethod::ClosedForm,
        };
        *out_ref(out, "out")? = normalizing_constant(&p, coord, m)?;
        Ok(())
    })
}

/// Mean exit time from `(a, b)` by the double-integral formula (1-D).
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pld_exit_time_quadrature(
    model: *const PldModel,
    a: f64,
    b: f64,
    x0: f64,
    out: *mut f64,
) -> PldStatus {
    guard(|| {
        let p = decoupled(model_ref(model)?)?;
        *out_ref(out, "out")? = exit_time_quadrature(&p, &interval(a, b), x0)?.value;
        Ok(())
    })
}

/// Mean exit time from `(a, b)` by the finite-difference boundary-value
/// solve on `n_grid` points (1-D).
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pld_exit_time_ode(
    model: *const PldModel,
    a: f64,
    b: f64,
    x0: f64,
    n_grid: usize,
    out: *mut f64,
) -> PldStatus {
    guard(|| {
        let p = decoupled(model_ref(model)?)?;
        *out_ref(out, "out")? = exit_time_ode_oracle(&p, &interval(a, b), x0, n_grid)?;
        Ok(())
    })
}

/// Monte Carlo mean exit time from `(a, b)`. `max_steps = 0` picks the
/// default horizon.
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pld_exit_time_mc(
    model: *const PldModel,
    a: f64,
    b: f64,
    x0: f64,
    step: f64,
    n_paths: u64,
    max_steps: u64,
    seed: u64,
    crossing: PldCrossing,
    out: *mut PldExitEstimate,
) -> PldStatus {
    guard(|| {
        let p = decoupled(model_ref(model)?)?;
        let out = out_ref(out, "out")?;
        let problem = ExitProblem {
            params: p,
            domain: interval(a, b),
            x0: vec![x0],
            step,
            max_steps: (max_steps > 0).then_some(max_steps),
            n_paths: usize::try_from(n_paths).map_err(|_| Error::InvalidParams("n_paths too large".into()))?,
            seed,
        };
        let crossing = match crossing {
            PldCrossing::GridOnly => Crossing::GridOnly,
            PldCrossing::BrownianBridge => Crossing::BrownianBridge,
        };
        let e = exit_time_mc(&problem, &ExitMcOptions { crossing, ..Default::default() })?.estimate;
        *out = PldExitEstimate {
            mean: e.mean,
            ci_low: e.ci_low,
            ci_high: e.ci_high,
            n_exited: e.n_exited as u64,
            n_censored: e.n_censored as u64,
            censored_lower_bound: e.censored_lower_bound as i32,
        };
        Ok(())
    })
}

/// Euler–Maruyama paths from `x0` (length `dim`).
///
/// # Safety
/// `model` must be a live handle, `cfg` readable, `x0` hold `dim` values and
/// `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn pld_simulate(
    model: *const PldModel,
    cfg: *const PldSimConfig,
    x0: *const f64,
    out: *mut *mut PldTrajectories,
) -> PldStatus {
    guard(|| {
        let model = model_ref(model)?;
        let cfg = cfg.as_ref().ok_or(Failure::Null("cfg"))?;
        let out = out_ref(out, "out")?;
        let sim = SimConfig {
            step: cfg.step,
            horizon: cfg.horizon,
            n_paths: usize::try_from(cfg.n_paths).map_err(|_| Error::InvalidParams("n_paths too large".into()))?,
            base_seed: cfg.base_seed,
            x0: slice(x0, model.dim(), "x0")?.to_vec(),
            record_stride: usize::try_from(cfg.record_stride).map_err(|_| Error::InvalidParams("record_stride too large".into()))?,
        };
        *out = Box::into_raw(Box::new(PldTrajectories(simulate_batch(model, &sim)?)));
        Ok(())
    })
}

/// # Safety
/// `t` must come from [`pld_simulate`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pld_trajectories_free(t: *mut PldTrajectories) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Writes `n_paths`, `n_records` and `dim`.
///
/// # Safety
/// `t` must be a live handle; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn pld_trajectories_shape(
    t: *const PldTrajectories,
    n_paths: *mut usize,
    n_records: *mut usize,
    dim: *mut usize,
) -> PldStatus {
    guard(|| {
        let t = &t.as_ref().ok_or(Failure::Null("trajectories"))?.0;
        *out_ref(n_paths, "n_paths")? = t.n_paths();
        *out_ref(n_records, "n_records")? = t.n_records();
        *out_ref(dim, "dim")? = t.dim;
        Ok(())
    })
}

/// Copies all values, path-major (`[path][record][coord]`), into `buf`.
/// Returns `BufferTooSmall` when `len < n_paths * n_records * dim`.
///
/// # Safety
/// `t` must be a live handle; `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn pld_trajectories_copy(t: *const PldTrajectories, buf: *mut f64, len: usize) -> PldStatus {
    guard(|| {
        let t = &t.as_ref().ok_or(Failure::Null("trajectories"))?.0;
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        if len < t.values.len() {
            return Err(Failure::Buffer(t.values.len()));
        }
        ptr::copy_nonoverlapping(t.values.as_ptr(), buf, t.values.len());
        Ok(())
    })
}

/// Copies the record times into `buf` (`n_records` values).
///
/// # Safety
/// `t` must be a live handle; `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn pld_trajectories_times(t: *const PldTrajectories, buf: *mut f64, len: usize) -> PldStatus {
    guard(|| {
        let t = &t.as_ref().ok_or(Failure::Null("trajectories"))?.0;
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        if len < t.times.len() {
            return Err(Failure::Buffer(t.times.len()));
        }
        ptr::copy_nonoverlapping(t.times.as_ptr(), buf, t.times.len());
        Ok(())
    })
}

/// Runs an experiment config given as a JSON string, writing its artifacts
/// under `out_dir` (null keeps `output.directory`).
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out_dir` NUL-terminated
/// or null.
#[no_mangle]
pub unsafe extern "C" fn pld_run_config(config_json: *const c_char, out_dir: *const c_char) -> PldStatus {
    guard(|| {
        if config_json.is_null() {
            return Err(Failure::Null("config_json"));
        }
        let text = CStr::from_ptr(config_json)
            .to_str()
            .map_err(|_| Error::Config { path: "<config>".into(), message: "not valid UTF-8".into() })?;
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::Config { path: "<config>".into(), message: format!("malformed JSON: {e}") })?;
        let (cfg, model) = resolve(parse(value)?)?;
        check(&cfg, &model)?;
        let dir = if out_dir.is_null() {
            cfg.output.directory.clone()
        } else {
            CStr::from_ptr(out_dir)
                .to_str()
                .map_err(|_| Error::InvalidParams("out_dir is not valid UTF-8".into()))?
                .to_string()
        };
        let mut artifacts = Artifacts::new(Path::new(&dir), &cfg.output.formats)?;
        execute(&cfg, &model, &mut artifacts)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_become_status() {
        let st = guard(|| panic!("boom"));
        assert_eq!(st, PldStatus::Panic);
        let msg = unsafe { CStr::from_ptr(pld_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "internal panic: boom");
    }

    #[test]
    fn interior_nul_is_dropped() {
        set_error("a\0b");
        let msg = unsafe { CStr::from_ptr(pld_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "ab");
    }

    #[test]
    fn numeric_errors_map_to_numerical() {
        let st = guard(|| Err(Error::HorizonTooShort { n_paths: 3 }.into()));
        assert_eq!(st, PldStatus::Numerical);
    }
}
