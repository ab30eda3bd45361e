//! C interface to the critsim simulator.
//!
//! Maps, scenarios, policies and attack outcomes cross the boundary as opaque
//! handles. Every fallible call returns a `CsStatus`; on failure the message
//! is kept per thread and can be fetched with `cs_last_error_message`.
//! Strings returned to the caller must be released with `cs_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use critsim::agents::{DriverParams, EgoAgent, PolicyEgo, PolicyModel, RuleBasedEgo};
use critsim::costs::CostWeights;
use critsim::geometry::MapModel;
use critsim::kinematics::BicycleParams;
use critsim::mapgen::{generate_map, MapTemplate, TemplateKind};
use critsim::optimizers::{attack, AttackConfig, AttackOutcome, Method};
use critsim::scenario::{deserialize_scenario, serialize_scenario, ScenarioSpec, Verdict, VerdictKind};
use critsim::sim::{Mode, Simulator};
use critsim::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Schema = 4,
    Geometry = 5,
    Route = 6,
    Incompatible = 7,
    Internal = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsVerdictKind {
    NoCollision = 0,
    EgoCollision = 1,
    AdvAdvCollision = 2,
    OffRoad = 3,
}

/// Outcome of a rollout. `time_index` and the agent indices are -1 for
/// `NoCollision`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsVerdict {
    pub kind: CsVerdictKind,
    pub time_index: i64,
    pub agent_a: i64,
    pub agent_b: i64,
}

pub struct CsMap(MapModel);
pub struct CsScenario(ScenarioSpec);
pub struct CsPolicy(PolicyModel);
pub struct CsAttackOutcome(AttackOutcome);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> CsStatus {
    match e {
        Error::IoFailure { .. } => CsStatus::Io,
        Error::SchemaViolation { .. } | Error::ShapeMismatch(_) => CsStatus::Schema,
        Error::DegenerateGeometry(_) | Error::OutOfExtent(..) | Error::UnknownMap(_) => CsStatus::Geometry,
        Error::RouteInfeasible(_) | Error::ProximityUnmet { .. } | Error::RouteExhausted => CsStatus::Route,
        Error::MethodIncompatible { .. } | Error::NotDifferentiableEgo | Error::NoAdversaries => CsStatus::Incompatible,
        _ => CsStatus::InvalidArgument,
    }
}

/// Run `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (CsStatus, String)>) -> CsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CsStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CsStatus::Internal
        }
    }
}

fn lib<T>(r: critsim::Result<T>) -> Result<T, (CsStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, (CsStatus, String)> {
    if p.is_null() {
        return Err((CsStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (CsStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, (CsStatus, String)> {
    p.as_ref()
        .ok_or_else(|| (CsStatus::NullPointer, format!("{name} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), (CsStatus, String)> {
    if out.is_null() {
        return Err((CsStatus::NullPointer, "out is null".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), (CsStatus, String)> {
    if out.is_null() {
        return Err((CsStatus::NullPointer, "out is null".into()));
    }
    let c = CString::new(s).map_err(|_| (CsStatus::Internal, "string contains NUL".to_string()))?;
    *out = c.into_raw();
    Ok(())
}

fn verdict(v: &Verdict) -> CsVerdict {
    let kind = match v.kind {
        VerdictKind::NoCollision => CsVerdictKind::NoCollision,
        VerdictKind::EgoCollision => CsVerdictKind::EgoCollision,
        VerdictKind::AdvAdvCollision => CsVerdictKind::AdvAdvCollision,
        VerdictKind::OffRoad => CsVerdictKind::OffRoad,
    };
    let (a, b) = v.agents_involved.map_or((-1, -1), |(a, b)| (a as i64, b as i64));
    CsVerdict {
        kind,
        time_index: v.time_index.map_or(-1, |t| t as i64),
        agent_a: a,
        agent_b: b,
    }
}

fn ego(policy: Option<&CsPolicy>) -> Box<dyn EgoAgent> {
    match policy {
        Some(p) => Box::new(PolicyEgo::new(p.0.clone(), DriverParams::default())),
        None => Box::new(RuleBasedEgo::default()),
    }
}

/// Message of the last failed call on this thread, or NULL. Free with
/// `cs_string_free`.
#[no_mangle]
pub extern "C" fn cs_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |s| s.clone().into_raw()))
}

/// # Safety
/// `s` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Generate a map from a template kind such as `"four_way_intersection"`.
///
/// # Safety
/// `kind` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_map_generate(kind: *const c_char, seed: u64, out: *mut *mut CsMap) -> CsStatus {
    guard(|| {
        let kind = lib(TemplateKind::parse(str_arg(kind, "kind")?))?;
        let map = lib(generate_map(&MapTemplate::new(kind, seed)))?;
        put(out, CsMap(map))
    })
}

/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_map_from_json(json: *const c_char, out: *mut *mut CsMap) -> CsStatus {
    guard(|| {
        let map = lib(MapModel::from_json(str_arg(json, "json")?.as_bytes()))?;
        put(out, CsMap(map))
    })
}

/// # Safety
/// `map` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_map_to_json(map: *const CsMap, out: *mut *mut c_char) -> CsStatus {
    guard(|| {
        let map = ref_arg(map, "map")?;
        put_string(out, String::from_utf8_lossy(&map.0.to_json()).into_owned())
    })
}

/// Signed distance to the road edge, positive on the road.
///
/// # Safety
/// `map` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_map_signed_distance(map: *const CsMap, x: f64, y: f64, out: *mut f64) -> CsStatus {
    guard(|| {
        let map = ref_arg(map, "map")?;
        if out.is_null() {
            return Err((CsStatus::NullPointer, "out is null".into()));
        }
        *out = map.0.sdf_at(critsim::scenario::Vec2::new(x, y));
        Ok(())
    })
}

/// # Safety
/// `map` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_map_free(map: *mut CsMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_scenario_from_json(json: *const c_char, out: *mut *mut CsScenario) -> CsStatus {
    guard(|| {
        let spec = lib(deserialize_scenario(str_arg(json, "json")?.as_bytes()))?;
        put(out, CsScenario(spec))
    })
}

/// # Safety
/// `scenario` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_scenario_to_json(scenario: *const CsScenario, out: *mut *mut c_char) -> CsStatus {
    guard(|| {
        let s = ref_arg(scenario, "scenario")?;
        put_string(out, String::from_utf8_lossy(&serialize_scenario(&s.0)).into_owned())
    })
}

/// Number of adversaries, or -1 for a NULL handle.
///
/// # Safety
/// `scenario` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_scenario_num_adversaries(scenario: *const CsScenario) -> i64 {
    scenario.as_ref().map_or(-1, |s| s.0.num_adversaries() as i64)
}

/// Roll the scenario out against the rule-based ego, or the policy if one is
/// given.
///
/// # Safety
/// `map` and `scenario` must be live handles, `policy` a live handle or NULL,
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_scenario_rollout(
    map: *const CsMap,
    scenario: *const CsScenario,
    policy: *const CsPolicy,
    out: *mut CsVerdict,
) -> CsStatus {
    guard(|| {
        let map = ref_arg(map, "map")?;
        let s = ref_arg(scenario, "scenario")?;
        if out.is_null() {
            return Err((CsStatus::NullPointer, "out is null".into()));
        }
        let sim = Simulator::new(&map.0, BicycleParams::default(), CostWeights::default());
        let r = lib(sim.rollout(&s.0, ego(policy.as_ref()).as_ref(), Mode::NoRecord))?;
        *out = verdict(&r.verdict);
        Ok(())
    })
}

/// # Safety
/// `scenario` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_scenario_free(scenario: *mut CsScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_policy_from_json(json: *const c_char, out: *mut *mut CsPolicy) -> CsStatus {
    guard(|| {
        let m = lib(PolicyModel::from_json(str_arg(json, "json")?.as_bytes()))?;
        put(out, CsPolicy(m))
    })
}

/// # Safety
/// `policy` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_policy_free(policy: *mut CsPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Attack `scenario` with `method` (`"king_direct"`, `"king_full"`,
/// `"random_search"`, `"simba"` or `"cma_es"`). Other settings take their
/// defaults. `king_full` needs a policy.
///
/// # Safety
/// `map` and `scenario` must be live handles, `policy` a live handle or NULL,
/// `method` a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_attack(
    map: *const CsMap,
    scenario: *const CsScenario,
    policy: *const CsPolicy,
    method: *const c_char,
    budget_seconds: f64,
    max_iterations: u64,
    seed: u64,
    out: *mut *mut CsAttackOutcome,
) -> CsStatus {
    guard(|| {
        let map = ref_arg(map, "map")?;
        let s = ref_arg(scenario, "scenario")?;
        let cfg = AttackConfig {
            method: lib(Method::parse(str_arg(method, "method")?))?,
            wall_clock_budget: budget_seconds,
            max_iterations: max_iterations as usize,
            seed,
            ..AttackConfig::default()
        };
        let sim = Simulator::new(&map.0, BicycleParams::default(), CostWeights::default());
        let o = lib(attack(&sim, &s.0, ego(policy.as_ref()).as_ref(), &cfg))?;
        put(out, CsAttackOutcome(o))
    })
}

/// 1 if the attack found a certified ego collision, 0 if not, -1 for NULL.
///
/// # Safety
/// `outcome` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_outcome_success(outcome: *const CsAttackOutcome) -> i32 {
    outcome.as_ref().map_or(-1, |o| o.0.success as i32)
}

/// # Safety
/// `outcome` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_outcome_iterations(outcome: *const CsAttackOutcome) -> u64 {
    outcome.as_ref().map_or(0, |o| o.0.iterations as u64)
}

/// NaN for NULL or when no rollout was evaluated.
///
/// # Safety
/// `outcome` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_outcome_best_cost(outcome: *const CsAttackOutcome) -> f64 {
    outcome.as_ref().map_or(f64::NAN, |o| o.0.best_cost)
}

/// # Safety
/// `outcome` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_outcome_verdict(outcome: *const CsAttackOutcome, out: *mut CsVerdict) -> CsStatus {
    guard(|| {
        let o = ref_arg(outcome, "outcome")?;
        if out.is_null() {
            return Err((CsStatus::NullPointer, "out is null".into()));
        }
        *out = verdict(&o.0.verdict);
        Ok(())
    })
}

/// A copy of `scenario` with the outcome's best plan substituted.
///
/// # Safety
/// `outcome` and `scenario` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_outcome_best_scenario(
    outcome: *const CsAttackOutcome,
    scenario: *const CsScenario,
    out: *mut *mut CsScenario,
) -> CsStatus {
    guard(|| {
        let o = ref_arg(outcome, "outcome")?;
        let s = ref_arg(scenario, "scenario")?;
        if o.0.best_plan.n_agents() != s.0.num_adversaries() || o.0.best_plan.horizon() != s.0.horizon {
            return Err((CsStatus::InvalidArgument, "plan does not fit the scenario".into()));
        }
        put(out, CsScenario(s.0.with_plan(o.0.best_plan.clone())))
    })
}

/// # Safety
/// `outcome` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_outcome_free(outcome: *mut CsAttackOutcome) {
    if !outcome.is_null() {
        drop(Box::from_raw(outcome));
    }
}
