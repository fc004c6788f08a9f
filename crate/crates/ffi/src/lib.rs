//! C interface to the simulator environment.
//!
//! Every function returns a [`V2gStatus`]. On failure the message is kept per
//! thread and can be fetched with [`v2g_last_error_message`]. Handles are
//! opaque, owned by the caller, and released with [`v2g_env_close`]. A handle
//! must not be used from two threads at once.

use std::cell::RefCell;
use std::collections::HashMap;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use v2g_sim::baselines::make_controller;
use v2g_sim::rl::Env;
use v2g_sim::{Controller, Problem, SimConfig, SimError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum V2gStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ConfigError = 3,
    IoError = 4,
    ShapeMismatch = 5,
    EpisodeDone = 6,
    Unsupported = 7,
    Internal = 8,
}

/// Problem selector for [`v2g_env_new`].
pub const V2G_PROBLEM_FROM_CONFIG: i32 = -1;
pub const V2G_PROBLEM_PST: i32 = 0;
pub const V2G_PROBLEM_PROFIT: i32 = 1;

/// Opaque environment handle.
pub struct V2gEnv {
    env: Env,
    controllers: HashMap<String, Box<dyn Controller + Send>>,
}

/// Summary of the last step. `p_set_kw` is NaN when there is no setpoint.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct V2gStepInfo {
    pub step: u64,
    pub p_total_kw: f64,
    pub p_set_kw: f64,
    pub cashflow_eur: f64,
    pub overload_kwh: f64,
    pub departures: u64,
    pub arrivals: u64,
}

/// Episode metrics; fields without a value (no setpoint, no departures) are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct V2gMetrics {
    pub energy_charged_kwh: f64,
    pub energy_discharged_kwh: f64,
    pub user_satisfaction: f64,
    pub profits_eur: f64,
    pub transformer_overload_kwh: f64,
    pub tracking_performance_kwh: f64,
    pub squared_tracking_error: f64,
    pub capacity_loss: f64,
    pub calendar_loss: f64,
    pub cyclic_loss: f64,
    pub transformer_undershoot_kwh: f64,
    pub episode_reward: f64,
    pub sessions: u64,
    pub controller_fallbacks: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &SimError) -> V2gStatus {
    match err {
        SimError::InvalidConfig { .. } | SimError::MalformedData { .. } | SimError::EmptyRegistry => V2gStatus::ConfigError,
        SimError::DataSource { .. } | SimError::Io(_) | SimError::Csv(_) => V2gStatus::IoError,
        SimError::ActionShape { .. } => V2gStatus::ShapeMismatch,
        SimError::Finished(_) => V2gStatus::EpisodeDone,
        SimError::Capability { .. } | SimError::UnknownAlgorithm(_) => V2gStatus::Unsupported,
        _ => V2gStatus::Internal,
    }
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (V2gStatus, String)>) -> V2gStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => V2gStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            V2gStatus::Internal
        }
    }
}

fn sim_err(e: SimError) -> (V2gStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (V2gStatus, String) {
    (V2gStatus::NullPointer, format!("{what} is null"))
}

unsafe fn env_mut<'a>(env: *mut V2gEnv) -> Result<&'a mut V2gEnv, (V2gStatus, String)> {
    env.as_mut().ok_or_else(|| null("env"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (V2gStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (V2gStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// Copies `src` into the caller's buffer of `len` doubles.
unsafe fn write_out(src: &[f64], out: *mut f64, len: usize, what: &str) -> Result<(), (V2gStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    if len != src.len() {
        return Err((
            V2gStatus::ShapeMismatch,
            format!("{what} buffer holds {len} values, need {}", src.len()),
        ));
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), out, len);
    Ok(())
}

/// Creates an environment from a TOML config file. `problem` is one of the
/// `V2G_PROBLEM_*` values; `seed` replaces the config's seed.
///
/// # Safety
/// `config_path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn v2g_env_new(config_path: *const c_char, problem: i32, seed: u64, out: *mut *mut V2gEnv) -> V2gStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let path = str_arg(config_path, "config_path")?;
        let mut config = SimConfig::from_path(Path::new(path)).map_err(sim_err)?;
        config.problem = match problem {
            V2G_PROBLEM_FROM_CONFIG => config.problem,
            V2G_PROBLEM_PST => Problem::Pst,
            V2G_PROBLEM_PROFIT => Problem::Profit,
            other => return Err((V2gStatus::InvalidArgument, format!("unknown problem selector {other}"))),
        };
        config.seed = seed;
        config.validate().map_err(sim_err)?;
        let env = Env::new(config).map_err(sim_err)?;
        *out = Box::into_raw(Box::new(V2gEnv {
            env,
            controllers: HashMap::new(),
        }));
        Ok(())
    })
}

/// Releases a handle. Passing null is allowed.
///
/// # Safety
/// `env` must come from [`v2g_env_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn v2g_env_close(env: *mut V2gEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// # Safety
/// `env` must be a live handle; `obs_len` and `action_len` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn v2g_env_sizes(env: *const V2gEnv, obs_len: *mut usize, action_len: *mut usize) -> V2gStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        if obs_len.is_null() || action_len.is_null() {
            return Err(null("size output"));
        }
        *obs_len = env.env.observation_space().len;
        *action_len = env.env.action_space().len;
        Ok(())
    })
}

/// Bounds shared by every action component.
///
/// # Safety
/// `env` must be a live handle; `low` and `high` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn v2g_env_action_bounds(env: *const V2gEnv, low: *mut f64, high: *mut f64) -> V2gStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        if low.is_null() || high.is_null() {
            return Err(null("bounds output"));
        }
        let s = env.env.action_space();
        *low = s.low;
        *high = s.high;
        Ok(())
    })
}

/// Starts a new episode and writes the first observation.
///
/// # Safety
/// `obs` must point to `obs_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn v2g_env_reset(env: *mut V2gEnv, seed: u64, obs: *mut f64, obs_len: usize) -> V2gStatus {
    guard(|| {
        let h = env_mut(env)?;
        let o = h.env.reset(seed).map_err(sim_err)?;
        h.controllers.clear();
        write_out(&o, obs, obs_len, "observation")
    })
}

/// Advances one step. `info` may be null.
///
/// # Safety
/// `action` must point to `action_len` doubles, `obs` to `obs_len` writable
/// doubles, `reward` and `done` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn v2g_env_step(
    env: *mut V2gEnv,
    action: *const f64,
    action_len: usize,
    obs: *mut f64,
    obs_len: usize,
    reward: *mut f64,
    done: *mut bool,
    info: *mut V2gStepInfo,
) -> V2gStatus {
    guard(|| {
        let h = env_mut(env)?;
        if action.is_null() {
            return Err(null("action"));
        }
        if reward.is_null() || done.is_null() {
            return Err(null("reward/done output"));
        }
        let expected = h.env.observation_space().len;
        if obs.is_null() {
            return Err(null("observation"));
        }
        if obs_len != expected {
            return Err((
                V2gStatus::ShapeMismatch,
                format!("observation buffer holds {obs_len} values, need {expected}"),
            ));
        }
        let a = std::slice::from_raw_parts(action, action_len);
        let r = h.env.step(a).map_err(sim_err)?;
        write_out(&r.observation, obs, obs_len, "observation")?;
        *reward = r.reward;
        *done = r.done;
        if !info.is_null() {
            let dt = h.env.config().dt_h();
            *info = V2gStepInfo {
                step: r.record.step as u64,
                p_total_kw: r.record.p_total_kw,
                p_set_kw: r.record.p_set_kw.unwrap_or(f64::NAN),
                cashflow_eur: r.record.cashflow,
                overload_kwh: r.record.overload_kw.iter().sum::<f64>() * dt,
                departures: r.record.departures.len() as u64,
                arrivals: r.record.arrivals.len() as u64,
            };
        }
        Ok(())
    })
}

/// Action a named causal baseline (`afap`, `alap`, `rr`, `mpc`, `mpc:<h>`)
/// would take now. Each baseline keeps its state on the handle until reset.
///
/// # Safety
/// `name` must be NUL-terminated; `action` must point to `action_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn v2g_env_baseline_action(env: *mut V2gEnv, name: *const c_char, action: *mut f64, action_len: usize) -> V2gStatus {
    guard(|| {
        let h = env_mut(env)?;
        let name = str_arg(name, "name")?.trim().to_ascii_lowercase();
        if !h.controllers.contains_key(&name) {
            let mut c = make_controller(&name, h.env.config()).map_err(sim_err)?;
            c.reset(h.env.simulation()).map_err(sim_err)?;
            h.controllers.insert(name.clone(), c);
        }
        let ctrl = h.controllers.get_mut(&name).expect("inserted above");
        let a = ctrl.act(h.env.simulation()).map_err(sim_err)?;
        write_out(&a, action, action_len, "action")
    })
}

/// Metrics over the steps taken so far.
///
/// # Safety
/// `env` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn v2g_env_metrics(env: *const V2gEnv, out: *mut V2gMetrics) -> V2gStatus {
    guard(|| {
        let h = env.as_ref().ok_or_else(|| null("env"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let m = h.env.metrics();
        *out = V2gMetrics {
            energy_charged_kwh: m.energy_charged_kwh,
            energy_discharged_kwh: m.energy_discharged_kwh,
            user_satisfaction: m.user_satisfaction.unwrap_or(f64::NAN),
            profits_eur: m.profits_eur,
            transformer_overload_kwh: m.transformer_overload_kwh,
            tracking_performance_kwh: m.tracking_performance_kwh.unwrap_or(f64::NAN),
            squared_tracking_error: m.squared_tracking_error.unwrap_or(f64::NAN),
            capacity_loss: m.capacity_loss,
            calendar_loss: m.calendar_loss,
            cyclic_loss: m.cyclic_loss,
            transformer_undershoot_kwh: m.transformer_undershoot_kwh,
            episode_reward: m.episode_reward,
            sessions: m.sessions as u64,
            controller_fallbacks: m.controller_fallbacks as u64,
        };
        Ok(())
    })
}

/// Writes the replay of the current episode as JSON.
///
/// # Safety
/// `env` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn v2g_env_save_replay(env: *const V2gEnv, path: *const c_char) -> V2gStatus {
    guard(|| {
        let h = env.as_ref().ok_or_else(|| null("env"))?;
        let path = str_arg(path, "path")?;
        h.env.save_replay().and_then(|r| r.save(Path::new(path))).map_err(sim_err)
    })
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `len`. Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null when `len` is 0.
#[no_mangle]
pub unsafe extern "C" fn v2g_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}
