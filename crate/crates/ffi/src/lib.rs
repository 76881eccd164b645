// SPDX-License-Identifier: Apache-2.0

//! C interface to the hfog simulator.
//!
//! Scenarios are opaque handles created by `hfog_scenario_*` constructors and
//! released with `hfog_scenario_free`. Every fallible call returns an
//! `HfogStatus`; on failure the message is available from
//! `hfog_last_error` on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hfog::baselines::PolicyKind;
use hfog::scenario::{Scenario, ScenarioError};
use hfog::sim::{self, Metrics, RunOptions, SimError};

/// Result codes.
#[repr(C)]
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum HfogStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// The scenario text could not be parsed or names an unknown scenario.
    Parse = 3,
    /// A parameter is out of range.
    Invalid = 4,
    /// The run itself failed.
    Simulation = 5,
    /// A panic was caught at the boundary.
    Panic = 6,
}

#[repr(C)]
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum HfogPolicy {
    Proposed = 0,
    Maas = 1,
    Urmila = 2,
}

impl From<HfogPolicy> for PolicyKind {
    fn from(p: HfogPolicy) -> Self {
        match p {
            HfogPolicy::Proposed => PolicyKind::Proposed,
            HfogPolicy::Maas => PolicyKind::Maas,
            HfogPolicy::Urmila => PolicyKind::Urmila,
        }
    }
}

impl From<PolicyKind> for HfogPolicy {
    fn from(p: PolicyKind) -> Self {
        match p {
            PolicyKind::Proposed => HfogPolicy::Proposed,
            PolicyKind::Maas => HfogPolicy::Maas,
            PolicyKind::Urmila => HfogPolicy::Urmila,
        }
    }
}

/// Opaque scenario handle.
pub struct HfogScenario {
    inner: Scenario,
}

/// Aggregate results of one run. `oracle_gap` is NaN when the optimality
/// study was not requested.
#[repr(C)]
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct HfogMetrics {
    pub technique: HfogPolicy,
    pub horizon_s: f64,
    pub seed: u64,
    pub devices: u32,
    pub pdt_s: f64,
    pub artt_s: f64,
    pub aect_j: f64,
    pub awct: f64,
    pub migrations: u64,
    pub cmt_s: f64,
    pub cmec_j: f64,
    pub cmwc: f64,
    pub tit: u64,
    pub fr_mode: bool,
    pub fully_placed_at_horizon: bool,
    pub oracle_gap: f64,
    pub tasks_completed: u64,
}

impl From<&Metrics> for HfogMetrics {
    fn from(m: &Metrics) -> Self {
        Self {
            technique: m.technique.into(),
            horizon_s: m.horizon_s,
            seed: m.seed,
            devices: m.devices,
            pdt_s: m.pdt_s,
            artt_s: m.artt_s,
            aect_j: m.aect_j,
            awct: m.awct,
            migrations: m.migrations,
            cmt_s: m.cmt_s,
            cmec_j: m.cmec_j,
            cmwc: m.cmwc,
            tit: m.tit,
            fr_mode: m.fr_mode,
            fully_placed_at_horizon: m.fully_placed_at_horizon,
            oracle_gap: m.oracle_gap.unwrap_or(f64::NAN),
            tasks_completed: m.counters.tasks_completed,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Failure(HfogStatus, String);

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let code = match e {
            ScenarioError::Parse(_) | ScenarioError::Unknown(_) | ScenarioError::Io { .. } => HfogStatus::Parse,
            _ => HfogStatus::Invalid,
        };
        Failure(code, e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Scenario(s) => s.into(),
            other => Failure(HfogStatus::Simulation, other.to_string()),
        }
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HfogStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HfogStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            HfogStatus::Panic
        }
    }
}

fn null() -> Failure {
    Failure(HfogStatus::NullPointer, "null pointer argument".into())
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(HfogStatus::InvalidUtf8, format!("argument is not UTF-8: {e}")))
}

unsafe fn handle<'a>(s: *mut HfogScenario) -> Result<&'a mut HfogScenario, Failure> {
    s.as_mut().ok_or_else(null)
}

fn publish(sc: Scenario, out: *mut *mut HfogScenario) {
    let h = Box::into_raw(Box::new(HfogScenario { inner: sc }));
    // SAFETY: callers checked `out` for null.
    unsafe { *out = h };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hfog_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hfog_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a bundled scenario by name, or a scenario file by path.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hfog_scenario_load(name: *const c_char, out: *mut *mut HfogScenario) -> HfogStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let sc = Scenario::load(text(name)?)?;
        publish(sc, out);
        Ok(())
    })
}

/// Parses a scenario from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hfog_scenario_from_toml(toml: *const c_char, out: *mut *mut HfogScenario) -> HfogStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let sc = Scenario::from_toml(text(toml)?)?;
        publish(sc, out);
        Ok(())
    })
}

/// Releases a scenario. NULL is ignored.
///
/// # Safety
/// `s` must come from a constructor of this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn hfog_scenario_free(s: *mut HfogScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Selects the policy, horizon and seed of the next run.
///
/// # Safety
/// `s` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hfog_scenario_configure(
    s: *mut HfogScenario,
    policy: HfogPolicy,
    horizon_s: f64,
    seed: u64,
) -> HfogStatus {
    guard(|| {
        let h = handle(s)?;
        let mut next = h.inner.clone();
        next.run.policy = policy.into();
        next.run.horizon_s = horizon_s;
        next.run.seed = seed;
        next.validate()?;
        h.inner = next;
        Ok(())
    })
}

/// Sets the number of devices and the application they run.
///
/// # Safety
/// `s` must be a live handle and `app` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hfog_scenario_set_devices(s: *mut HfogScenario, count: u32, app: *const c_char) -> HfogStatus {
    guard(|| {
        let h = handle(s)?;
        let mut next = h.inner.clone();
        next.devices.count = count;
        next.devices.app = text(app)?.to_string();
        next.validate()?;
        h.inner = next;
        Ok(())
    })
}

/// Sets the migration failure probability and whether recovery is on.
///
/// # Safety
/// `s` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hfog_scenario_set_failure(s: *mut HfogScenario, p: f64, recovery: bool) -> HfogStatus {
    guard(|| {
        let h = handle(s)?;
        let mut next = h.inner.clone();
        next.failure.migration_p = p;
        next.failure.recovery = recovery;
        next.validate()?;
        h.inner = next;
        Ok(())
    })
}

/// The scenario with every default filled in, as TOML. Free the result with
/// `hfog_string_free`.
///
/// # Safety
/// `s` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hfog_scenario_effective_config(s: *const HfogScenario, out: *mut *mut c_char) -> HfogStatus {
    guard(|| {
        let h = s.as_ref().ok_or_else(null)?;
        if out.is_null() {
            return Err(null());
        }
        let c = CString::new(h.inner.effective_config())
            .map_err(|e| Failure(HfogStatus::Invalid, format!("config contains NUL: {e}")))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `p` must come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn hfog_string_free(p: *mut c_char) {
    if !p.is_null() {
        drop(CString::from_raw(p));
    }
}

/// Runs the scenario to its horizon and writes the aggregates to `out`.
/// With `optimality` set, every placement is also solved exactly and
/// `oracle_gap` reports the mean relative gap.
///
/// # Safety
/// `s` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hfog_run(s: *const HfogScenario, optimality: bool, out: *mut HfogMetrics) -> HfogStatus {
    guard(|| {
        let h = s.as_ref().ok_or_else(null)?;
        if out.is_null() {
            return Err(null());
        }
        let opts = RunOptions { optimality, event_log: false, ..Default::default() };
        let res = sim::run(&h.inner, &opts)?;
        *out = HfogMetrics::from(&res.metrics);
        Ok(())
    })
}
