//! C ABI over the `bipen` solvers.
//!
//! Every handle is opaque and owned by the caller once returned; release it
//! with the matching `*_free`. Functions return a [`BipenStatus`] and write
//! results through out-pointers. The message of the last failure on the
//! calling thread is available from [`bipen_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use bipen::config::RunConfig;
use bipen::landscape::{self, Accuracy};
use bipen::oracle::Oracle;
use bipen::solver::{run_collect, RunOptions, SolverState};
use bipen::testbed::{build, TestbedName};
use bipen::trace::{write_trace, MetricRow};
use bipen::{BilevelProblem, Error};
use nalgebra::DVector;

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BipenStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Unsupported = 5,
    KktInconsistent = 6,
    Parse = 7,
    Io = 8,
    OutOfRange = 9,
    Panic = 10,
}

impl From<&Error> for BipenStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Argument(_) => BipenStatus::InvalidArgument,
            Error::Config(_) => BipenStatus::Config,
            Error::Numerical { .. } => BipenStatus::Numerical,
            Error::Unsupported(_) => BipenStatus::Unsupported,
            Error::KktInconsistent { .. } => BipenStatus::KktInconsistent,
            Error::Parse { .. } => BipenStatus::Parse,
            Error::Io(_) => BipenStatus::Io,
        }
    }
}

/// A named test problem.
pub struct BipenProblem {
    inner: BilevelProblem,
}

/// A parsed run configuration.
pub struct BipenConfig {
    inner: RunConfig,
}

/// A finished solver run: final state plus its metric rows.
pub struct BipenRun {
    state: SolverState,
    rows: Vec<MetricRow>,
}

/// One metric row. Absent optional values are NaN.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BipenRow {
    pub k: u64,
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
    pub t: u64,
    pub m: u64,
    pub delta_x: f64,
    pub delta_y: f64,
    pub delta_z: f64,
    pub eps_level: f64,
    pub potential: f64,
    pub psi_sigma: f64,
    pub oracle_calls: u64,
    pub wall_ms: f64,
}

impl From<&MetricRow> for BipenRow {
    fn from(r: &MetricRow) -> Self {
        BipenRow {
            k: r.k,
            sigma: r.sigma,
            alpha: r.alpha,
            beta: r.beta,
            gamma: r.gamma,
            eta: r.eta,
            t: r.t,
            m: r.m,
            delta_x: r.delta_x,
            delta_y: r.delta_y,
            delta_z: r.delta_z,
            eps_level: r.eps_level,
            potential: r.potential.unwrap_or(f64::NAN),
            psi_sigma: r.psi_sigma.unwrap_or(f64::NAN),
            oracle_calls: r.oracle_calls,
            wall_ms: r.wall_ms,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(BipenStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(BipenStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(BipenStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BipenStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BipenStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".to_string());
            BipenStatus::Panic
        }
    }
}

unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure(BipenStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn reference<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn point(problem: &BilevelProblem, x: *const f64, len: usize) -> Result<DVector<f64>, Failure> {
    if x.is_null() {
        return Err(null("x"));
    }
    if len != problem.dim_x() {
        return Err(Failure(
            BipenStatus::InvalidArgument,
            format!("x has length {len}, expected {}", problem.dim_x()),
        ));
    }
    Ok(DVector::from_column_slice(std::slice::from_raw_parts(x, len)))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bipen_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn bipen_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds the test problem called `name`.
///
/// # Safety
/// `name` must be a valid C string and `problem` a valid out-pointer.
#[no_mangle]
pub unsafe extern "C" fn bipen_problem_new(name: *const c_char, problem: *mut *mut BipenProblem) -> BipenStatus {
    guard(|| {
        let slot = out(problem, "problem")?;
        let name: TestbedName = text(name, "name")?.parse()?;
        *slot = Box::into_raw(Box::new(BipenProblem {
            inner: build(name).base,
        }));
        Ok(())
    })
}

/// # Safety
/// `problem` must come from [`bipen_problem_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn bipen_problem_free(problem: *mut BipenProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Upper and lower dimensions.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bipen_problem_dims(
    problem: *const BipenProblem,
    dim_x: *mut usize,
    dim_y: *mut usize,
) -> BipenStatus {
    guard(|| {
        let p = &reference(problem, "problem")?.inner;
        *out(dim_x, "dim_x")? = p.dim_x();
        *out(dim_y, "dim_y")? = p.dim_y();
        Ok(())
    })
}

/// Penalized hyper-objective at `x` (length `len`) and `sigma > 0`.
///
/// # Safety
/// `x` must point to `len` doubles; the other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bipen_psi_sigma(
    problem: *const BipenProblem,
    x: *const f64,
    len: usize,
    sigma: f64,
    value: *mut f64,
) -> BipenStatus {
    guard(|| {
        let p = &reference(problem, "problem")?.inner;
        let x = point(p, x, len)?;
        let slot = out(value, "value")?;
        *slot = landscape::eval_psi_sigma(p, &x, sigma, Accuracy::ClosedForm)?;
        Ok(())
    })
}

/// Hyper-objective `psi` at `x`.
///
/// # Safety
/// `x` must point to `len` doubles; the other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bipen_psi(
    problem: *const BipenProblem,
    x: *const f64,
    len: usize,
    value: *mut f64,
) -> BipenStatus {
    guard(|| {
        let p = &reference(problem, "problem")?.inner;
        let x = point(p, x, len)?;
        let slot = out(value, "value")?;
        *slot = landscape::eval_psi(p, &x)?;
        Ok(())
    })
}

/// Parses a `key = value` configuration.
///
/// # Safety
/// `source` must be a valid C string and `config` a valid out-pointer.
#[no_mangle]
pub unsafe extern "C" fn bipen_config_parse(source: *const c_char, config: *mut *mut BipenConfig) -> BipenStatus {
    guard(|| {
        let slot = out(config, "config")?;
        let inner = RunConfig::parse(text(source, "source")?)?;
        *slot = Box::into_raw(Box::new(BipenConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `config` must come from [`bipen_config_parse`] or be null.
#[no_mangle]
pub unsafe extern "C" fn bipen_config_free(config: *mut BipenConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs replica `replica` of the configured experiment in memory.
///
/// # Safety
/// `config` must be a live handle and `run` a valid out-pointer.
#[no_mangle]
pub unsafe extern "C" fn bipen_solve(config: *const BipenConfig, replica: u64, run: *mut *mut BipenRun) -> BipenStatus {
    guard(|| {
        let cfg = &reference(config, "config")?.inner;
        let slot = out(run, "run")?;
        if replica >= cfg.replicas {
            return Err(Failure(
                BipenStatus::OutOfRange,
                format!("replica {replica} out of range (replicas = {})", cfg.replicas),
            ));
        }
        let problem = build(cfg.problem).base;
        let schedule = cfg.schedule()?;
        let oracle = Oracle::new(cfg.oracle_config()?);
        let options = RunOptions {
            track_potential: cfg.track_potential,
            track_psi_sigma: cfg.track_psi_sigma,
            report_every: cfg.report_every,
            record_wall_time: cfg.record_wall_time,
            diagnostics: Accuracy::ClosedForm,
            ..RunOptions::default()
        };
        let (state, rows) = run_collect(
            &problem,
            cfg.algorithm,
            &schedule,
            &oracle,
            cfg.k,
            cfg.replica_seed(replica),
            &options,
        )?;
        *slot = Box::into_raw(Box::new(BipenRun { state, rows }));
        Ok(())
    })
}

/// # Safety
/// `run` must come from [`bipen_solve`] or be null.
#[no_mangle]
pub unsafe extern "C" fn bipen_run_free(run: *mut BipenRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of metric rows in the run; 0 for a null handle.
///
/// # Safety
/// `run` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn bipen_run_row_count(run: *const BipenRun) -> usize {
    run.as_ref().map_or(0, |r| r.rows.len())
}

/// Copies row `index` into `row`.
///
/// # Safety
/// `run` must be a live handle and `row` a valid out-pointer.
#[no_mangle]
pub unsafe extern "C" fn bipen_run_row(run: *const BipenRun, index: usize, row: *mut BipenRow) -> BipenStatus {
    guard(|| {
        let r = reference(run, "run")?;
        let slot = out(row, "row")?;
        let src = r.rows.get(index).ok_or_else(|| {
            Failure(
                BipenStatus::OutOfRange,
                format!("row {index} out of range ({} rows)", r.rows.len()),
            )
        })?;
        *slot = BipenRow::from(src);
        Ok(())
    })
}

/// Copies the final upper-level iterate into `x`, which holds `capacity`
/// doubles. `written` receives the dimension even when `capacity` is too
/// small, in which case nothing is copied and `OutOfRange` is returned.
///
/// # Safety
/// `x` must point to `capacity` writable doubles; `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bipen_run_final_x(
    run: *const BipenRun,
    x: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> BipenStatus {
    guard(|| {
        let r = reference(run, "run")?;
        let n = out(written, "written")?;
        let src = r.state.x.as_slice();
        *n = src.len();
        if capacity < src.len() {
            return Err(Failure(
                BipenStatus::OutOfRange,
                format!("buffer holds {capacity} values, need {}", src.len()),
            ));
        }
        if x.is_null() {
            return Err(null("x"));
        }
        std::slice::from_raw_parts_mut(x, src.len()).copy_from_slice(src);
        Ok(())
    })
}

/// Total gradient-oracle calls of the run.
///
/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bipen_run_oracle_calls(run: *const BipenRun, calls: *mut u64) -> BipenStatus {
    guard(|| {
        let r = reference(run, "run")?;
        *out(calls, "calls")? = r.state.oracle_calls.total();
        Ok(())
    })
}

/// Writes the run's metric rows as a trace file at `path`.
///
/// # Safety
/// `run` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn bipen_run_write_trace(run: *const BipenRun, path: *const c_char) -> BipenStatus {
    guard(|| {
        let r = reference(run, "run")?;
        let path = text(path, "path")?;
        write_trace(&r.rows, Path::new(path))?;
        Ok(())
    })
}
