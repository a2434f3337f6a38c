//! C ABI over `soed-core`.
//!
//! Problems and policies are opaque handles owned by the caller and released
//! with the matching `_free` function. Every fallible call returns a
//! [`SoedStatus`]; on failure `soed_last_error` describes the error for the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use soed_core::models::{linear_gaussian, CaseConfig, Engine, Profile};
use soed_core::nnet::Checkpoint;
use soed_core::problem::ProblemSpec;
use soed_core::soed::{evaluate_policy, train, DesignPolicy, Policy, TrainConfig};
use soed_core::state::History;
use soed_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoedStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Numerical = 3,
    InvalidArgument = 4,
    Io = 5,
    Panic = 6,
}

/// Opaque problem handle.
pub struct SoedProblem(ProblemSpec);

/// Opaque policy handle.
pub struct SoedPolicy(Policy);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> SoedStatus {
    match err {
        e if e.is_numerical() => SoedStatus::Numerical,
        Error::Config(_) | Error::Json(_) | Error::ArchMismatch { .. } => SoedStatus::Config,
        Error::Io(_) | Error::Csv(_) => SoedStatus::Io,
        _ => SoedStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (SoedStatus, String)>) -> SoedStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SoedStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside soed".into());
            SoedStatus::Panic
        }
    }
}

fn core<T>(r: soed_core::Result<T>) -> Result<T, (SoedStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (SoedStatus, String) {
    (SoedStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SoedStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SoedStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message for the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn soed_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds `linear_gaussian` or `source_case{1,2,3}` (desk profile,
/// tabulated solver).
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn soed_problem_builtin(name: *const c_char, out: *mut *mut SoedProblem) -> SoedStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = if name == "linear_gaussian" {
            linear_gaussian::benchmark()
        } else {
            let case = CaseConfig::builtin(name, Profile::Desk)
                .ok_or_else(|| (SoedStatus::Config, format!("unknown problem `{name}`")))?;
            core(case.problem(Engine::Tabulated))?
        };
        *out = Box::into_raw(Box::new(SoedProblem(spec)));
        Ok(())
    })
}

/// # Safety
/// `problem` must come from `soed_problem_builtin` or be null.
#[no_mangle]
pub unsafe extern "C" fn soed_problem_free(problem: *mut SoedProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Number of experiments, design and observation dimensions.
///
/// # Safety
/// `problem` must be a live handle; the output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn soed_problem_dims(
    problem: *const SoedProblem,
    horizon: *mut usize,
    design_dim: *mut usize,
    obs_dim: *mut usize,
) -> SoedStatus {
    guard(|| {
        let p = &problem.as_ref().ok_or_else(|| null("problem"))?.0;
        for (ptr, v) in [(horizon, p.horizon), (design_dim, p.design_dim()), (obs_dim, p.obs_dim())] {
            if !ptr.is_null() {
                *ptr = v;
            }
        }
        Ok(())
    })
}

/// Trains a policy. `overrides_json` is a JSON object of training settings
/// applied over the problem's preset, or null for the preset itself.
///
/// # Safety
/// `problem` must be a live handle, `overrides_json` null or NUL-terminated,
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn soed_train(
    problem: *const SoedProblem,
    overrides_json: *const c_char,
    out: *mut *mut SoedPolicy,
) -> SoedStatus {
    guard(|| {
        let p = &problem.as_ref().ok_or_else(|| null("problem"))?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let preset = if p.name == "linear_gaussian" {
            TrainConfig::benchmark()
        } else {
            TrainConfig::source()
        };
        let cfg = if overrides_json.is_null() {
            preset
        } else {
            let text = str_arg(overrides_json, "overrides_json")?;
            let over: serde_json::Value = core(serde_json::from_str(text).map_err(Error::from))?;
            let Some(over) = over.as_object() else {
                return Err((SoedStatus::Config, "overrides must be a JSON object".into()));
            };
            let mut base = core(serde_json::to_value(preset).map_err(Error::from))?;
            let obj = base.as_object_mut().expect("object");
            for (k, v) in over {
                obj.insert(k.clone(), v.clone());
            }
            core(serde_json::from_value(base).map_err(Error::from))?
        };
        let outcome = core(train(&cfg, p))?;
        *out = Box::into_raw(Box::new(SoedPolicy(outcome.policy)));
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn soed_policy_load(path: *const c_char, out: *mut *mut SoedPolicy) -> SoedStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let ck = core(Checkpoint::load(Path::new(path)))?;
        let policy = core(Policy::from_checkpoint(&ck))?;
        *out = Box::into_raw(Box::new(SoedPolicy(policy)));
        Ok(())
    })
}

/// # Safety
/// `policy` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn soed_policy_save(policy: *const SoedPolicy, path: *const c_char) -> SoedStatus {
    guard(|| {
        let pol = &policy.as_ref().ok_or_else(|| null("policy"))?.0;
        let path = str_arg(path, "path")?;
        core(pol.checkpoint().save(Path::new(path)))
    })
}

/// # Safety
/// `policy` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn soed_policy_free(policy: *mut SoedPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Design for experiment `stage` given the `stage` previous experiments:
/// `designs` holds `stage × design_dim` and `observations` `stage × obs_dim`
/// values, row-major. Writes `design_dim` values to `out`.
///
/// # Safety
/// The arrays must hold the stated number of values (they may be null when
/// `stage` is 0) and `out` must have room for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn soed_policy_act(
    policy: *const SoedPolicy,
    problem: *const SoedProblem,
    stage: usize,
    designs: *const f64,
    observations: *const f64,
    out: *mut f64,
    out_len: usize,
) -> SoedStatus {
    guard(|| {
        let pol = &policy.as_ref().ok_or_else(|| null("policy"))?.0;
        let p = &problem.as_ref().ok_or_else(|| null("problem"))?.0;
        core(pol.check_problem(p))?;
        let (nd, ny) = (p.design_dim(), p.obs_dim());
        if stage >= p.horizon {
            return Err((SoedStatus::InvalidArgument, format!("stage {stage} beyond horizon {}", p.horizon)));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len < nd {
            return Err((SoedStatus::InvalidArgument, format!("out_len {out_len} < design dimension {nd}")));
        }
        let mut h = History::new(p.horizon);
        if stage > 0 {
            if designs.is_null() || observations.is_null() {
                return Err(null("history"));
            }
            let d = std::slice::from_raw_parts(designs, stage * nd);
            let y = std::slice::from_raw_parts(observations, stage * ny);
            for k in 0..stage {
                h = core(h.append(&d[k * nd..(k + 1) * nd], &y[k * ny..(k + 1) * ny]))?;
            }
        }
        let design = core(pol.act(stage, &h))?;
        let design = p.design.clamp(&design, &p.positions(&h)[stage]);
        ptr::copy_nonoverlapping(design.as_ptr(), out, nd);
        Ok(())
    })
}

/// Mean total reward and its standard error over `n` evaluation episodes.
///
/// # Safety
/// Handles must be live; `mean` and `standard_error` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn soed_evaluate(
    policy: *const SoedPolicy,
    problem: *const SoedProblem,
    n: usize,
    seed: u64,
    mean: *mut f64,
    standard_error: *mut f64,
) -> SoedStatus {
    guard(|| {
        let pol = &policy.as_ref().ok_or_else(|| null("policy"))?.0;
        let p = &problem.as_ref().ok_or_else(|| null("problem"))?.0;
        if mean.is_null() || standard_error.is_null() {
            return Err(null("output"));
        }
        core(pol.check_problem(p))?;
        let e = core(evaluate_policy(pol, p, n, seed))?;
        *mean = e.mean;
        *standard_error = e.standard_error;
        Ok(())
    })
}

/// Optimal expected utility of the linear-Gaussian benchmark.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn soed_lg_optimal_utility(out: *mut f64) -> SoedStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = linear_gaussian::lg_optimal_utility().utility;
        Ok(())
    })
}
