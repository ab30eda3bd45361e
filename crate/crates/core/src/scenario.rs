//! Domain records: agent and traffic states, actions, action plans,
//! scenario specifications and rollout verdicts, plus the scenario JSON
//! format.

use nalgebra::Vector2;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geometry::OrientedBox;

pub type Vec2 = Vector2<f64>;

pub const SCENARIO_FORMAT_VERSION: u64 = 1;
pub const DEFAULT_HALF_LENGTH: f64 = 2.45;
pub const DEFAULT_HALF_WIDTH: f64 = 1.0;

/// Wrap an angle into `[0, 2pi)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(std::f64::consts::TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= std::f64::consts::TAU {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl AgentState {
    /// A sedan-sized agent.
    pub fn new(position: Vec2, heading: f64, speed: f64) -> Self {
        Self {
            position,
            heading: normalize_angle(heading),
            speed: speed.max(0.0),
            half_length: DEFAULT_HALF_LENGTH,
            half_width: DEFAULT_HALF_WIDTH,
        }
    }

    pub fn bbox(&self) -> OrientedBox {
        OrientedBox::new(self.position, self.heading, self.half_length, self.half_width)
    }

    pub fn forward(&self) -> Vec2 {
        Vec2::new(self.heading.cos(), self.heading.sin())
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let finite = self.position.x.is_finite()
            && self.position.y.is_finite()
            && self.heading.is_finite()
            && self.speed.is_finite();
        if !finite {
            return Err(Error::schema(path, "non-finite state"));
        }
        if self.speed < 0.0 {
            return Err(Error::schema(format!("{path}.speed"), "speed must be >= 0"));
        }
        if !(self.half_length > 0.0 && self.half_width > 0.0) {
            return Err(Error::schema(path, "box extents must be positive"));
        }
        if !(0.0..std::f64::consts::TAU).contains(&self.heading) {
            return Err(Error::schema(format!("{path}.heading"), "heading must lie in [0, 2pi)"));
        }
        Ok(())
    }
}

/// All agents at one timestep; index 0 is the ego.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficState {
    pub agents: Vec<AgentState>,
}

impl TrafficState {
    pub fn ego(&self) -> &AgentState {
        &self.agents[0]
    }

    pub fn num_adversaries(&self) -> usize {
        self.agents.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Action {
    pub throttle: f64,
    pub steer: f64,
}

impl Action {
    pub fn new(throttle: f64, steer: f64) -> Self {
        Self {
            throttle: throttle.clamp(-1.0, 1.0),
            steer: steer.clamp(-1.0, 1.0),
        }
    }
}

/// Odd squashing map from raw parameters onto (-1, 1).
pub fn squash(raw: f64) -> f64 {
    raw.tanh()
}

pub fn squash_derivative(raw: f64) -> f64 {
    let t = raw.tanh();
    1.0 - t * t
}

/// Inverse of [`squash`], saturating just inside the open interval.
pub fn unsquash(action: f64) -> f64 {
    const LIMIT: f64 = 1.0 - 1e-9;
    action.clamp(-LIMIT, LIMIT).atanh()
}

/// Per-adversary action sequences stored as unconstrained raw parameters,
/// laid out `[agent][t][throttle, steer]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionPlan {
    n_agents: usize,
    horizon: usize,
    raw: Vec<f64>,
}

impl ActionPlan {
    pub fn zeros(n_agents: usize, horizon: usize) -> Self {
        Self {
            n_agents,
            horizon,
            raw: vec![0.0; n_agents * horizon * 2],
        }
    }

    pub fn from_raw(n_agents: usize, horizon: usize, raw: Vec<f64>) -> Result<Self> {
        if raw.len() != n_agents * horizon * 2 {
            return Err(Error::ShapeMismatch(format!(
                "plan of {} values cannot be {n_agents}x{horizon}x2",
                raw.len()
            )));
        }
        Ok(Self { n_agents, horizon, raw })
    }

    /// Build from already-bounded actions; `actions[i][t]` for adversary `i`.
    pub fn from_actions(actions: &[Vec<Action>], horizon: usize) -> Result<Self> {
        let mut plan = Self::zeros(actions.len(), horizon);
        for (i, seq) in actions.iter().enumerate() {
            if seq.len() != horizon {
                return Err(Error::ShapeMismatch(format!(
                    "adversary {i} has {} actions, expected {horizon}",
                    seq.len()
                )));
            }
            for (t, a) in seq.iter().enumerate() {
                let k = plan.index(i, t);
                plan.raw[k] = unsquash(a.throttle);
                plan.raw[k + 1] = unsquash(a.steer);
            }
        }
        Ok(plan)
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.raw.len()
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.raw
    }

    /// Flat offset of the throttle entry of adversary `i` (0-based) at `t`.
    pub fn index(&self, i: usize, t: usize) -> usize {
        (i * self.horizon + t) * 2
    }

    /// Squashed action of adversary `i` (0-based among adversaries) at `t`.
    pub fn action(&self, i: usize, t: usize) -> Action {
        let k = self.index(i, t);
        Action {
            throttle: squash(self.raw[k]),
            steer: squash(self.raw[k + 1]),
        }
    }

    pub fn with_raw(&self, raw: Vec<f64>) -> Self {
        assert_eq!(raw.len(), self.raw.len(), "plan dimensionality changed");
        Self { raw, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VerdictKind {
    EgoCollision,
    AdvAdvCollision,
    OffRoad,
    NoCollision,
}

impl VerdictKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            VerdictKind::EgoCollision => "ego_collision",
            VerdictKind::AdvAdvCollision => "adv_adv_collision",
            VerdictKind::OffRoad => "off_road",
            VerdictKind::NoCollision => "no_collision",
        }
    }
}

/// How a rollout ended. Off-road verdicts report the offending agent twice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub kind: VerdictKind,
    pub time_index: Option<usize>,
    pub agents_involved: Option<(usize, usize)>,
}

impl Verdict {
    pub fn no_collision() -> Self {
        Self {
            kind: VerdictKind::NoCollision,
            time_index: None,
            agents_involved: None,
        }
    }

    pub fn new(kind: VerdictKind, t: usize, agents: (usize, usize)) -> Self {
        Self {
            kind,
            time_index: Some(t),
            agents_involved: Some(agents),
        }
    }

    pub fn involves_ego(&self) -> bool {
        self.kind == VerdictKind::EgoCollision
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub map_id: String,
    pub horizon: usize,
    pub dt: f64,
    pub ego_route: Vec<Vec2>,
    pub ego_goal: Vec2,
    pub initial_state: TrafficState,
    pub initial_plan: ActionPlan,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn num_adversaries(&self) -> usize {
        self.initial_state.num_adversaries()
    }

    pub fn with_plan(&self, plan: ActionPlan) -> Self {
        Self {
            initial_plan: plan,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::schema("horizon", "must be >= 1"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::schema("dt", "must be > 0"));
        }
        if self.initial_state.agents.is_empty() {
            return Err(Error::schema("agents", "ego agent missing"));
        }
        for (i, a) in self.initial_state.agents.iter().enumerate() {
            a.validate(&format!("agents[{i}]"))?;
        }
        if self.initial_plan.n_agents() != self.num_adversaries() || self.initial_plan.horizon() != self.horizon {
            return Err(Error::schema(
                "plan",
                format!(
                    "plan shape {}x{} does not match {} adversaries x horizon {}",
                    self.initial_plan.n_agents(),
                    self.initial_plan.horizon(),
                    self.num_adversaries(),
                    self.horizon
                ),
            ));
        }
        if self.ego_route.is_empty() {
            return Err(Error::schema("ego_route", "must be nonempty"));
        }
        Ok(())
    }

    pub fn to_json_value(&self) -> Value {
        let pt = |p: &Vec2| json!([p.x, p.y]);
        let agents: Vec<Value> = self
            .initial_state
            .agents
            .iter()
            .map(|a| {
                json!({
                    "x": a.position.x,
                    "y": a.position.y,
                    "heading": a.heading,
                    "speed": a.speed,
                    "half_length": a.half_length,
                    "half_width": a.half_width,
                })
            })
            .collect();
        let plan: Vec<Value> = (0..self.initial_plan.n_agents())
            .map(|i| {
                let steps: Vec<Value> = (0..self.initial_plan.horizon())
                    .map(|t| {
                        let k = self.initial_plan.index(i, t);
                        let raw = self.initial_plan.raw();
                        json!([raw[k], raw[k + 1]])
                    })
                    .collect();
                Value::Array(steps)
            })
            .collect();
        json!({
            "version": SCENARIO_FORMAT_VERSION,
            "map_id": self.map_id,
            "horizon": self.horizon,
            "dt": self.dt,
            "seed": self.seed,
            "ego_route": self.ego_route.iter().map(pt).collect::<Vec<_>>(),
            "ego_goal": pt(&self.ego_goal),
            "agents": agents,
            "plan": plan,
        })
    }

    pub fn from_json_value(v: &Value) -> Result<Self> {
        let obj = v.as_object().ok_or_else(|| Error::schema("$", "expected an object"))?;
        let field = |k: &str| obj.get(k).ok_or_else(|| Error::schema(k, "missing required key"));
        let version = as_u64(field("version")?, "version")?;
        if version != SCENARIO_FORMAT_VERSION {
            return Err(Error::schema("version", format!("unsupported version {version}")));
        }
        let map_id = field("map_id")?
            .as_str()
            .ok_or_else(|| Error::schema("map_id", "expected a string"))?
            .to_string();
        let horizon = as_u64(field("horizon")?, "horizon")? as usize;
        let dt = as_f64(field("dt")?, "dt")?;
        let seed = as_u64(field("seed")?, "seed")?;
        let ego_route = as_points(field("ego_route")?, "ego_route")?;
        let ego_goal = as_point(field("ego_goal")?, "ego_goal")?;

        let agents_v = as_array(field("agents")?, "agents")?;
        let mut agents = Vec::with_capacity(agents_v.len());
        for (i, a) in agents_v.iter().enumerate() {
            let path = format!("agents[{i}]");
            let o = a
                .as_object()
                .ok_or_else(|| Error::schema(&path, "expected an object"))?;
            let get = |k: &str| -> Result<f64> {
                let p = format!("{path}.{k}");
                as_f64(o.get(k).ok_or_else(|| Error::schema(&p, "missing"))?, &p)
            };
            agents.push(AgentState {
                position: Vec2::new(get("x")?, get("y")?),
                heading: get("heading")?,
                speed: get("speed")?,
                half_length: get("half_length")?,
                half_width: get("half_width")?,
            });
        }

        let plan_v = as_array(field("plan")?, "plan")?;
        let n = plan_v.len();
        let mut raw = Vec::with_capacity(n * horizon * 2);
        for (i, seq) in plan_v.iter().enumerate() {
            let seq = as_array(seq, &format!("plan[{i}]"))?;
            if seq.len() != horizon {
                return Err(Error::schema(
                    format!("plan[{i}]"),
                    format!("expected {horizon} steps, got {}", seq.len()),
                ));
            }
            for (t, step) in seq.iter().enumerate() {
                let p = as_point(step, &format!("plan[{i}][{t}]"))?;
                raw.push(p.x);
                raw.push(p.y);
            }
        }
        let spec = ScenarioSpec {
            map_id,
            horizon,
            dt,
            ego_route,
            ego_goal,
            initial_state: TrafficState { agents },
            initial_plan: ActionPlan::from_raw(n, horizon, raw)?,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn serialize_scenario(spec: &ScenarioSpec) -> Vec<u8> {
    serde_json::to_vec_pretty(&spec.to_json_value()).expect("scenario JSON is always serializable")
}

pub fn deserialize_scenario(bytes: &[u8]) -> Result<ScenarioSpec> {
    let v: Value = serde_json::from_slice(bytes)
        .map_err(|e| Error::schema(format!("$ (line {}, column {})", e.line(), e.column()), e.to_string()))?;
    ScenarioSpec::from_json_value(&v)
}

pub(crate) fn as_f64(v: &Value, path: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| Error::schema(path, "expected a number"))
}

pub(crate) fn as_u64(v: &Value, path: &str) -> Result<u64> {
    v.as_u64()
        .ok_or_else(|| Error::schema(path, "expected a non-negative integer"))
}

pub(crate) fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| Error::schema(path, "expected an array"))
}

pub(crate) fn as_point(v: &Value, path: &str) -> Result<Vec2> {
    let a = as_array(v, path)?;
    if a.len() != 2 {
        return Err(Error::schema(path, "expected [x, y]"));
    }
    Ok(Vec2::new(
        as_f64(&a[0], &format!("{path}[0]"))?,
        as_f64(&a[1], &format!("{path}[1]"))?,
    ))
}

pub(crate) fn as_points(v: &Value, path: &str) -> Result<Vec<Vec2>> {
    as_array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, p)| as_point(p, &format!("{path}[{i}]")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_spec(n: usize, horizon: usize, seed: u64) -> ScenarioSpec {
        let mut agents = vec![AgentState::new(Vec2::new(0.1, -3.3), 0.3, 6.0)];
        for i in 0..n {
            agents.push(AgentState::new(
                Vec2::new(10.0 * i as f64 + 1.0 / 3.0, 4.0),
                1.0 + i as f64,
                5.5,
            ));
        }
        let raw: Vec<f64> = (0..n * horizon * 2).map(|k| (k as f64 * 0.37).sin() / 7.0).collect();
        ScenarioSpec {
            map_id: "m".into(),
            horizon,
            dt: 0.25,
            ego_route: vec![Vec2::new(0.0, 0.0), Vec2::new(std::f64::consts::PI, 1e-17)],
            ego_goal: Vec2::new(1.0 / 7.0, 2.0),
            initial_state: TrafficState { agents },
            initial_plan: ActionPlan::from_raw(n, horizon, raw).unwrap(),
            seed,
        }
    }

    #[test]
    fn squash_properties() {
        assert_eq!(squash(0.0), 0.0);
        assert!((squash(unsquash(0.3)) - 0.3).abs() < 1e-15);
        assert!(squash(50.0) <= 1.0 && squash(-50.0) >= -1.0);
    }

    #[test]
    fn plan_shape_is_n_t_2() {
        let spec = sample_spec(4, 80, 1);
        let v = spec.to_json_value();
        let plan = v["plan"].as_array().unwrap();
        assert_eq!(plan.len(), 4);
        assert!(plan.iter().all(|s| s.as_array().unwrap().len() == 80));
        assert!(plan[0][0].as_array().unwrap().len() == 2);
        assert_eq!(spec.initial_plan.dim(), 4 * 80 * 2);
    }

    #[test]
    fn truncated_bytes_rejected() {
        let bytes = serialize_scenario(&sample_spec(2, 5, 3));
        let err = deserialize_scenario(&bytes[..bytes.len() / 2]).unwrap_err();
        assert!(matches!(err, Error::SchemaViolation { .. }));
    }

    #[test]
    fn wrong_plan_shape_reports_path() {
        let mut v = sample_spec(1, 3, 0).to_json_value();
        v["plan"][0].as_array_mut().unwrap().pop();
        match ScenarioSpec::from_json_value(&v) {
            Err(Error::SchemaViolation { path, .. }) => assert_eq!(path, "plan[0]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_adversary_set_round_trips() {
        let spec = sample_spec(0, 80, 0);
        let back = deserialize_scenario(&serialize_scenario(&spec)).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.initial_plan.dim(), 0);
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            n in 0usize..4,
            horizon in 1usize..12,
            seed in any::<u64>(),
            x in -1e6f64..1e6,
            heading in 0.0f64..std::f64::consts::TAU,
            raw in proptest::collection::vec(-1e3f64..1e3, 96),
        ) {
            let mut spec = sample_spec(n, horizon, seed);
            spec.initial_state.agents[0].position.x = x;
            spec.initial_state.agents[0].heading = heading;
            let dim = spec.initial_plan.dim();
            spec.initial_plan = spec.initial_plan.with_raw(raw[..dim].to_vec());
            let back = deserialize_scenario(&serialize_scenario(&spec)).unwrap();
            prop_assert_eq!(back, spec);
        }
    }
}
