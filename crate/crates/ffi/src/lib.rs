//! C ABI over `dmabf-core`.
//!
//! Every function returns a [`DmabfStatus`]. On failure a message is kept per
//! thread and can be read with [`dmabf_last_error`]; success leaves it
//! untouched. Handles are created by `*_new`/`*_from_*`/`dmabf_run` and must be
//! released with the matching `*_free`. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use dmabf_core::beamform::{self, BeamformStatus, BeamformingResult, Mode, ScenarioInstance};
use dmabf_core::channel::{channel_vectors, Point3};
use dmabf_core::dma::{lorentzian_project, DmaState};
use dmabf_core::harness::{self, Experiment, RecordStatus, ScenarioConfig};
use dmabf_core::numerics::{dbm_to_watts, ComplexVector};
use dmabf_core::Error;
use num_complex::Complex64;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmabfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Infeasible = 4,
    Solver = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmabfMode {
    Fd = 0,
    Op1 = 1,
    Dma = 2,
    Uw = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmabfRunStatus {
    Converged = 0,
    Infeasible = 1,
    MaxIter = 2,
    Failed = 3,
}

/// One experiment record. Power fields are NaN unless the run converged.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DmabfRecord {
    pub realization: u64,
    pub mode: DmabfMode,
    pub k: usize,
    pub status: DmabfRunStatus,
    pub tx_power_watts: f64,
    pub tx_power_dbm: f64,
    pub min_sinr_margin: f64,
    pub iterations: usize,
}

pub struct DmabfConfig(ScenarioConfig);

pub struct DmabfExperiment(Experiment);

/// Users placed in front of an array described by a config, for one mode.
pub struct DmabfScenario {
    instance: ScenarioInstance,
    options: beamform::SolverOptions,
}

pub struct DmabfResult(BeamformingResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(DmabfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) => DmabfStatus::Config,
            Error::Invalid(_) | Error::Dimension(_) | Error::Domain(_) => DmabfStatus::InvalidArgument,
            Error::Infeasible(_) => DmabfStatus::Infeasible,
            Error::Solver(_) | Error::Singularity { .. } => DmabfStatus::Solver,
            Error::Io { .. } | Error::Format { .. } => DmabfStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DmabfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DmabfStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {message}"));
            DmabfStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(DmabfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(DmabfStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn mode_from(m: DmabfMode) -> Mode {
    match m {
        DmabfMode::Fd => Mode::Fd,
        DmabfMode::Op1 => Mode::Op1,
        DmabfMode::Dma => Mode::Dma,
        DmabfMode::Uw => Mode::Uw,
    }
}

fn mode_to(m: Mode) -> DmabfMode {
    match m {
        Mode::Fd => DmabfMode::Fd,
        Mode::Op1 => DmabfMode::Op1,
        Mode::Dma => DmabfMode::Dma,
        Mode::Uw => DmabfMode::Uw,
    }
}

fn run_status(s: RecordStatus) -> DmabfRunStatus {
    match s {
        RecordStatus::Converged => DmabfRunStatus::Converged,
        RecordStatus::Infeasible => DmabfRunStatus::Infeasible,
        RecordStatus::MaxIter => DmabfRunStatus::MaxIter,
        RecordStatus::Failed => DmabfRunStatus::Failed,
    }
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dmabf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn dmabf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be a valid pointer to write a handle to.
#[no_mangle]
pub unsafe extern "C" fn dmabf_config_default(out: *mut *mut DmabfConfig) -> DmabfStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        *out = Box::into_raw(Box::new(DmabfConfig(ScenarioConfig::default())));
        Ok(())
    })
}

/// Parses and validates a TOML config.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dmabf_config_from_toml(toml: *const c_char, out: *mut *mut DmabfConfig) -> DmabfStatus {
    guard(|| {
        let text = as_str(toml, "toml")?;
        let out = as_mut(out, "out")?;
        let cfg = ScenarioConfig::from_toml_str(text)?;
        *out = Box::into_raw(Box::new(DmabfConfig(cfg)));
        Ok(())
    })
}

/// Sets one key, with the same names and value syntax as the CLI flags.
///
/// # Safety
/// `cfg` must come from this library; `key` and `value` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dmabf_config_set(cfg: *mut DmabfConfig, key: *const c_char, value: *const c_char) -> DmabfStatus {
    guard(|| {
        let cfg = as_mut(cfg, "config")?;
        cfg.0.set(as_str(key, "key")?, as_str(value, "value")?)?;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dmabf_config_free(cfg: *mut DmabfConfig) {
    free(cfg)
}

/// Runs the Monte-Carlo experiment described by `cfg`.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dmabf_run(cfg: *const DmabfConfig, out: *mut *mut DmabfExperiment) -> DmabfStatus {
    guard(|| {
        let cfg = as_ref(cfg, "config")?;
        let out = as_mut(out, "out")?;
        let exp = harness::run_experiment(&cfg.0)?;
        *out = Box::into_raw(Box::new(DmabfExperiment(exp)));
        Ok(())
    })
}

/// # Safety
/// `exp` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dmabf_experiment_free(exp: *mut DmabfExperiment) {
    free(exp)
}

/// # Safety
/// `exp` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dmabf_experiment_len(exp: *const DmabfExperiment, out: *mut usize) -> DmabfStatus {
    guard(|| {
        *as_mut(out, "out")? = as_ref(exp, "experiment")?.0.records.len();
        Ok(())
    })
}

/// # Safety
/// `exp` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dmabf_experiment_record(
    exp: *const DmabfExperiment,
    index: usize,
    out: *mut DmabfRecord,
) -> DmabfStatus {
    guard(|| {
        let exp = as_ref(exp, "experiment")?;
        let out = as_mut(out, "out")?;
        let r = exp.0.records.get(index).ok_or_else(|| {
            Failure(
                DmabfStatus::InvalidArgument,
                format!("record {index} out of range ({} records)", exp.0.records.len()),
            )
        })?;
        *out = DmabfRecord {
            realization: r.realization,
            mode: mode_to(r.mode),
            k: r.k,
            status: run_status(r.status),
            tx_power_watts: r.tx_power_watts.unwrap_or(f64::NAN),
            tx_power_dbm: r.tx_power_dbm.unwrap_or(f64::NAN),
            min_sinr_margin: r.min_sinr_margin.unwrap_or(f64::NAN),
            iterations: r.iterations,
        };
        Ok(())
    })
}

/// Summary mean power of one mode and user count. Returns
/// `DMABF_STATUS_INFEASIBLE` when no run of that pair converged.
///
/// # Safety
/// `exp` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dmabf_experiment_mean_power_dbm(
    exp: *const DmabfExperiment,
    mode: DmabfMode,
    k: usize,
    out: *mut f64,
) -> DmabfStatus {
    guard(|| {
        let exp = as_ref(exp, "experiment")?;
        let out = as_mut(out, "out")?;
        let mode = mode_from(mode);
        let s = exp.0.summary.mode(mode, k).ok_or_else(|| {
            Failure(DmabfStatus::InvalidArgument, format!("no runs for mode {mode} with K = {k}"))
        })?;
        *out = s
            .mean_power_dbm
            .ok_or_else(|| Failure(DmabfStatus::Infeasible, format!("no converged run for mode {mode} with K = {k}")))?;
        Ok(())
    })
}

/// # Safety
/// `exp` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dmabf_experiment_write_csv(exp: *const DmabfExperiment, path: *const c_char) -> DmabfStatus {
    guard(|| {
        let exp = as_ref(exp, "experiment")?;
        harness::write_csv(&exp.0.records, Path::new(as_str(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `exp` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dmabf_experiment_write_json(exp: *const DmabfExperiment, path: *const c_char) -> DmabfStatus {
    guard(|| {
        let exp = as_ref(exp, "experiment")?;
        harness::write_json(&exp.0, Path::new(as_str(path, "path")?))?;
        Ok(())
    })
}

/// Builds a single instance: `num_users` users at `user_xyz` (three
/// coordinates each, meters) for the array, rate and noise of `cfg`.
///
/// # Safety
/// `cfg` must be a live handle, `user_xyz` must hold `3 * num_users` doubles
/// and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dmabf_scenario_new(
    cfg: *const DmabfConfig,
    mode: DmabfMode,
    user_xyz: *const f64,
    num_users: usize,
    out: *mut *mut DmabfScenario,
) -> DmabfStatus {
    guard(|| {
        let cfg = &as_ref(cfg, "config")?.0;
        let out = as_mut(out, "out")?;
        if user_xyz.is_null() {
            return Err(null("user_xyz"));
        }
        if num_users == 0 {
            return Err(Failure(DmabfStatus::InvalidArgument, "need at least one user".into()));
        }
        let coords = std::slice::from_raw_parts(user_xyz, 3 * num_users);
        let users: Vec<Point3> = coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let mode = mode_from(mode);
        let geometry = cfg.geometry(mode)?;
        let channels = channel_vectors(&geometry, &users, cfg.wavelength())?;
        let dma = if mode.is_digital() {
            None
        } else {
            let n = geometry.num_elements();
            Some(DmaState::new(geometry, ComplexVector::zeros(n))?)
        };
        let instance = ScenarioInstance::with_rate(channels, cfg.r_min, dbm_to_watts(cfg.noise_dbm), dma, mode)?;
        *out = Box::into_raw(Box::new(DmabfScenario {
            instance,
            options: cfg.solver_options(),
        }));
        Ok(())
    })
}

/// # Safety
/// `scenario` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dmabf_scenario_free(scenario: *mut DmabfScenario) {
    free(scenario)
}

/// Solves the scenario. An infeasible instance still returns a result, whose
/// status says so.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dmabf_scenario_solve(
    scenario: *const DmabfScenario,
    seed: u64,
    out: *mut *mut DmabfResult,
) -> DmabfStatus {
    guard(|| {
        let s = as_ref(scenario, "scenario")?;
        let out = as_mut(out, "out")?;
        let opts = beamform::SolverOptions { seed, ..s.options.clone() };
        let res = beamform::solve(&s.instance, &opts)?;
        *out = Box::into_raw(Box::new(DmabfResult(res)));
        Ok(())
    })
}

/// # Safety
/// `result` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dmabf_result_free(result: *mut DmabfResult) {
    free(result)
}

/// # Safety
/// `result` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dmabf_result_status(result: *const DmabfResult, out: *mut DmabfRunStatus) -> DmabfStatus {
    guard(|| {
        *as_mut(out, "out")? = match as_ref(result, "result")?.0.status {
            BeamformStatus::Converged => DmabfRunStatus::Converged,
            BeamformStatus::Infeasible => DmabfRunStatus::Infeasible,
            BeamformStatus::MaxIter => DmabfRunStatus::MaxIter,
        };
        Ok(())
    })
}

/// Radiated power in watts; NaN for infeasible results.
///
/// # Safety
/// `result` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dmabf_result_tx_power_watts(result: *const DmabfResult, out: *mut f64) -> DmabfStatus {
    guard(|| {
        *as_mut(out, "out")? = as_ref(result, "result")?.0.tx_power_watts;
        Ok(())
    })
}

/// # Safety
/// `result` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dmabf_result_iterations(result: *const DmabfResult, out: *mut usize) -> DmabfStatus {
    guard(|| {
        *as_mut(out, "out")? = as_ref(result, "result")?.0.iterations;
        Ok(())
    })
}

/// Copies the achieved SINRs into `buf`. `written` receives the number of
/// users; a buffer shorter than that is an invalid argument.
///
/// # Safety
/// `result` must be a live handle, `buf` must hold `len` doubles and
/// `written` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dmabf_result_sinrs(
    result: *const DmabfResult,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> DmabfStatus {
    guard(|| {
        let sinrs = &as_ref(result, "result")?.0.achieved_sinrs;
        let written = as_mut(written, "written")?;
        *written = sinrs.len();
        if len < sinrs.len() {
            return Err(Failure(
                DmabfStatus::InvalidArgument,
                format!("buffer holds {len} values, need {}", sinrs.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        std::slice::from_raw_parts_mut(buf, sinrs.len()).copy_from_slice(sinrs);
        Ok(())
    })
}

/// Nearest point of the Lorentzian weight circle `(j + e^{j phi}) / 2`.
///
/// # Safety
/// `out_re` and `out_im` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn dmabf_lorentzian_project(re: f64, im: f64, out_re: *mut f64, out_im: *mut f64) -> DmabfStatus {
    guard(|| {
        let out_re = as_mut(out_re, "out_re")?;
        let out_im = as_mut(out_im, "out_im")?;
        if !(re.is_finite() && im.is_finite()) {
            return Err(Failure(DmabfStatus::InvalidArgument, "point must be finite".into()));
        }
        let p = lorentzian_project(Complex64::new(re, im)).weight;
        *out_re = p.re;
        *out_im = p.im;
        Ok(())
    })
}
