//! C ABI for running experiments and reading their results.
//!
//! Every function returns a [`MiloStatus`]; on failure the message is
//! available from [`milo_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use milo::cli::{prepare, Data, ExperimentConfig, Method, MethodOutcome, Prepared};
use milo::discriminators::mmd_best_response;
use milo::solver::normalized_score;
use milo::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MiloStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Runtime = 4,
    Utf8 = 5,
    Panic = 6,
}

/// Parsed experiment with its environment, expert and behavior built.
pub struct MiloExperiment {
    config: ExperimentConfig,
    prepared: Prepared,
}

/// Result of one method on one seed.
pub struct MiloRunResult {
    outcome: MethodOutcome,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MiloIterationMetrics {
    pub iter: usize,
    pub ipm: f64,
    pub v_true: f64,
    pub v_model: f64,
    pub bc_loss: f64,
    pub penalty_mass: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> MiloStatus {
    match err {
        Error::Config(_) => MiloStatus::Config,
        Error::InvalidArgument(_) | Error::Dimension(_) | Error::InvalidDistribution(_) => MiloStatus::InvalidArgument,
        _ => MiloStatus::Runtime,
    }
}

struct Fail(MiloStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MiloStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MiloStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            MiloStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(MiloStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail(MiloStatus::Utf8, format!("{what} is not valid UTF-8: {e}")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on this thread.
#[no_mangle]
pub extern "C" fn milo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn milo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses an experiment config (JSON) and builds its environment and policies.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn milo_experiment_from_json(json: *const c_char, out: *mut *mut MiloExperiment) -> MiloStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let text = str_arg(json, "json")?;
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Fail(MiloStatus::Config, format!("config error: {e}")))?;
        let prepared = prepare(&config)?;
        *out = Box::into_raw(Box::new(MiloExperiment { config, prepared }));
        Ok(())
    })
}

/// # Safety
/// `exp` must come from [`milo_experiment_from_json`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn milo_experiment_free(exp: *mut MiloExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Normalized score of the behavior policy that generates the offline data.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn milo_experiment_behavior_score(exp: *const MiloExperiment, out: *mut f64) -> MiloStatus {
    guard(|| {
        let exp = exp.as_ref().ok_or_else(|| null("exp"))?;
        *out_arg(out, "out")? = exp.prepared.norm().behavior_score;
        Ok(())
    })
}

/// Number of seeds listed in the config.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn milo_experiment_num_seeds(exp: *const MiloExperiment, out: *mut usize) -> MiloStatus {
    guard(|| {
        let exp = exp.as_ref().ok_or_else(|| null("exp"))?;
        *out_arg(out, "out")? = exp.config.seeds.len();
        Ok(())
    })
}

/// Generates the datasets for `seed` and runs `method` ("milo",
/// "milo-nopess", "bc-expert", "bc-both" or "offline-rl") on them.
///
/// # Safety
/// `exp` must be valid, `method` NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn milo_experiment_run(
    exp: *const MiloExperiment,
    method: *const c_char,
    seed: u64,
    out: *mut *mut MiloRunResult,
) -> MiloStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let exp = exp.as_ref().ok_or_else(|| null("exp"))?;
        let method: Method = str_arg(method, "method")?.parse()?;
        let data: Data = exp.prepared.generate(&exp.config, seed)?;
        let outcome = exp.prepared.run_method(method, &data, &exp.config.solver, seed)?;
        *out = Box::into_raw(Box::new(MiloRunResult { outcome }));
        Ok(())
    })
}

/// # Safety
/// `res` must come from [`milo_experiment_run`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn milo_run_result_free(res: *mut MiloRunResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Final true-environment value (expected cumulative cost).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn milo_run_result_final_value(res: *const MiloRunResult, out: *mut f64) -> MiloStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(|| null("res"))?;
        *out_arg(out, "out")? = res.outcome.final_value;
        Ok(())
    })
}

/// Normalized score: 1 at the expert, 0 at uniformly random actions.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn milo_run_result_score(res: *const MiloRunResult, out: *mut f64) -> MiloStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(|| null("res"))?;
        *out_arg(out, "out")? = res.outcome.score;
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn milo_run_result_num_iterations(res: *const MiloRunResult, out: *mut usize) -> MiloStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(|| null("res"))?;
        *out_arg(out, "out")? = res.outcome.report.iterations.len();
        Ok(())
    })
}

/// Metrics of iteration `index` (zero-based).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn milo_run_result_iteration(
    res: *const MiloRunResult,
    index: usize,
    out: *mut MiloIterationMetrics,
) -> MiloStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(|| null("res"))?;
        let out = out_arg(out, "out")?;
        let its = &res.outcome.report.iterations;
        let m = its.get(index).ok_or_else(|| {
            Fail(MiloStatus::InvalidArgument, format!("iteration {index} out of range (have {})", its.len()))
        })?;
        *out = MiloIterationMetrics {
            iter: m.iter,
            ipm: m.ipm,
            v_true: m.v_true,
            v_model: m.v_model,
            bc_loss: m.bc_loss,
            penalty_mass: m.penalty_mass,
        };
        Ok(())
    })
}

/// Full report as JSON. Release the string with [`milo_string_free`].
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn milo_run_result_to_json(res: *const MiloRunResult, out: *mut *mut c_char) -> MiloStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let res = res.as_ref().ok_or_else(|| null("res"))?;
        let text = serde_json::to_string(&res.outcome).map_err(|e| Fail(MiloStatus::Runtime, e.to_string()))?;
        *out = CString::new(text).map_err(|e| Fail(MiloStatus::Runtime, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn milo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Closed-form MMD best response: `w = delta / ||delta||` (zero when the
/// means agree) and the gap `||delta||`, for `delta = mean_model - mean_expert`.
///
/// # Safety
/// `mean_model`, `mean_expert` and `w_out` must hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn milo_mmd_best_response(
    mean_model: *const f64,
    mean_expert: *const f64,
    dim: usize,
    w_out: *mut f64,
    value_out: *mut f64,
) -> MiloStatus {
    guard(|| {
        if mean_model.is_null() || mean_expert.is_null() || w_out.is_null() {
            return Err(null("vector argument"));
        }
        let value_out = out_arg(value_out, "value_out")?;
        let m = std::slice::from_raw_parts(mean_model, dim);
        let e = std::slice::from_raw_parts(mean_expert, dim);
        let (w, v) = mmd_best_response(m, e)?;
        std::slice::from_raw_parts_mut(w_out, dim).copy_from_slice(&w.w);
        *value_out = v;
        Ok(())
    })
}

/// `(j_random - j) / (j_random - j_expert)`.
#[no_mangle]
pub extern "C" fn milo_normalized_score(j_random: f64, j_expert: f64, j: f64) -> f64 {
    normalized_score(j_random, j_expert, j)
}
