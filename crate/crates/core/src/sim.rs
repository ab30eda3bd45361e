//! Closed-loop rollout with a recorded tape of per-step Jacobians, and the
//! reverse sweeps that turn it into a gradient over the adversary plan.

use nalgebra::Vector4;

use crate::agents::{features_vjp, EgoAgent, EgoContext, PolicyStepTape};
use crate::costs::{total_cost, CostBreakdown, CostWeights};
use crate::error::{Error, Result};
use crate::geometry::{boxes_overlap, MapModel};
use crate::kinematics::{step, step_with_jacobians, BicycleParams, StepJacobians};
use crate::route::Route;
use crate::scenario::{squash_derivative, Action, ScenarioSpec, TrafficState, Verdict, VerdictKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Keep the dynamics Jacobians needed by `backward_direct`.
    Record,
    /// Also keep the ego policy's forward pass for `backward_full`.
    RecordFull,
    NoRecord,
}

/// Jacobians of every realized step. `steps[t][i]` maps state `t` of agent
/// `i` to state `t + 1`.
#[derive(Debug, Clone)]
pub struct Tape {
    pub steps: Vec<Vec<StepJacobians>>,
    pub policy: Vec<Option<PolicyStepTape>>,
    pub raw: Vec<f64>,
    pub horizon: usize,
}

#[derive(Debug, Clone)]
pub struct RolloutResult {
    pub states: Vec<TrafficState>,
    pub verdict: Verdict,
    /// Absent when there are no adversaries to score.
    pub cost: Option<CostBreakdown>,
    pub tape: Option<Tape>,
}

impl RolloutResult {
    pub fn total_cost(&self) -> f64 {
        self.cost.as_ref().map_or(0.0, |c| c.total)
    }

    /// Number of simulated transitions.
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }
}

/// `d_cost_d_raw` has the layout of [`crate::scenario::ActionPlan::raw`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlanGradient {
    pub d_cost_d_raw: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Simulator<'m> {
    pub map: &'m MapModel,
    pub kin: BicycleParams,
    pub weights: CostWeights,
}

/// First terminating event in `state`, checked in priority order.
pub fn classify(state: &TrafficState, map: &MapModel, t: usize) -> Option<Verdict> {
    let boxes: Vec<_> = state.agents.iter().map(|a| a.bbox()).collect();
    for i in 1..boxes.len() {
        if boxes_overlap(&boxes[0], &boxes[i]) {
            return Some(Verdict::new(VerdictKind::EgoCollision, t, (0, i)));
        }
    }
    for i in 1..boxes.len() {
        for j in i + 1..boxes.len() {
            if boxes_overlap(&boxes[i], &boxes[j]) {
                return Some(Verdict::new(VerdictKind::AdvAdvCollision, t, (i, j)));
            }
        }
    }
    for (i, b) in boxes.iter().enumerate().skip(1) {
        if map.box_offroad_violation(b) {
            return Some(Verdict::new(VerdictKind::OffRoad, t, (i, i)));
        }
    }
    None
}

impl<'m> Simulator<'m> {
    pub fn new(map: &'m MapModel, kin: BicycleParams, weights: CostWeights) -> Self {
        Self { map, kin, weights }
    }

    fn kin_for(&self, spec: &ScenarioSpec) -> BicycleParams {
        BicycleParams {
            dt: spec.dt,
            ..self.kin
        }
    }

    pub fn rollout(&self, spec: &ScenarioSpec, ego: &dyn EgoAgent, mode: Mode) -> Result<RolloutResult> {
        spec.validate()?;
        let kin = self.kin_for(spec);
        let route = Route::new(&spec.ego_route);
        let plan = &spec.initial_plan;
        let n = spec.initial_state.agents.len();
        let record = mode != Mode::NoRecord;
        let trace_ego = mode == Mode::RecordFull;

        let mut states = Vec::with_capacity(spec.horizon + 1);
        states.push(spec.initial_state.clone());
        let mut steps = Vec::new();
        let mut policy = Vec::new();
        let mut verdict = Verdict::no_collision();

        for t in 0..spec.horizon {
            let cur = states.last().expect("nonempty");
            let ctx = EgoContext {
                t,
                state: cur,
                plan,
                route: &route,
                kin: &kin,
            };
            let ego_action = if trace_ego {
                let (a, tape) = ego.act_traced(&ctx);
                policy.push(tape);
                a
            } else {
                ego.act(&ctx)
            };
            let mut next = cur.clone();
            let mut jacs = Vec::with_capacity(if record { n } else { 0 });
            for (i, agent) in next.agents.iter_mut().enumerate() {
                let action: Action = if i == 0 { ego_action } else { plan.action(i - 1, t) };
                if record {
                    let (s, j) = step_with_jacobians(agent, action, &kin);
                    *agent = s;
                    jacs.push(j);
                } else {
                    *agent = step(agent, action, &kin);
                }
            }
            if record {
                steps.push(jacs);
            }
            let event = classify(&next, self.map, t + 1);
            states.push(next);
            if let Some(v) = event {
                verdict = v;
                break;
            }
        }

        let cost = if n > 1 {
            Some(total_cost(&states, spec.horizon, self.map, &self.weights)?)
        } else {
            None
        };
        let tape = record.then(|| Tape {
            steps,
            policy,
            raw: plan.raw().to_vec(),
            horizon: spec.horizon,
        });
        Ok(RolloutResult {
            states,
            verdict,
            cost,
            tape,
        })
    }

    /// Gradient along the direct path only: ego states are treated as
    /// constants, so nothing flows back through the ego's decisions.
    pub fn backward_direct(&self, result: &RolloutResult) -> Result<PlanGradient> {
        backward(result, None)
    }

    /// Exact gradient through the differentiable ego policy as well.
    pub fn backward_full(&self, result: &RolloutResult, ego: &dyn EgoAgent) -> Result<PlanGradient> {
        let model = ego.policy().ok_or(Error::NotDifferentiableEgo)?;
        let tape = result.tape.as_ref().ok_or(Error::TapeMissing)?;
        if tape.policy.len() != tape.steps.len() || tape.policy.iter().any(Option::is_none) {
            return Err(Error::NotDifferentiableEgo);
        }
        backward(result, Some(model))
    }
}

fn backward(result: &RolloutResult, policy: Option<&crate::agents::PolicyModel>) -> Result<PlanGradient> {
    let tape = result.tape.as_ref().ok_or(Error::TapeMissing)?;
    let mut grad = vec![0.0; tape.raw.len()];
    let Some(cost) = result.cost.as_ref() else {
        return Ok(PlanGradient { d_cost_d_raw: grad });
    };
    let g = &cost.d_cost_d_state;
    let n = result.states[0].agents.len();
    let horizon = tape.horizon;

    let last = result.states.len() - 1;
    let mut adj: Vec<Vector4<f64>> = g[last].clone();
    for t in (0..last).rev() {
        let jacs = &tape.steps[t];
        let mut prev: Vec<Vector4<f64>> = g[t].clone();
        for i in 1..n {
            let j = &jacs[i];
            prev[i] += j.d_next_d_state.transpose() * adj[i];
            let ga = j.d_next_d_action.transpose() * adj[i];
            let k = ((i - 1) * horizon + t) * 2;
            grad[k] += ga[0] * squash_derivative(tape.raw[k]);
            grad[k + 1] += ga[1] * squash_derivative(tape.raw[k + 1]);
        }
        if let Some(model) = policy {
            let step_tape = tape.policy[t].as_ref().expect("checked by caller");
            let j = &jacs[0];
            prev[0] += j.d_next_d_state.transpose() * adj[0];
            let ga = j.d_next_d_action.transpose() * adj[0];
            let c = &step_tape.controller;
            prev[0][3] += ga[0] * c.d_throttle_d_speed;
            let mut d_out = [0.0; crate::agents::policy::OUTPUT_LEN];
            for k in 0..4 {
                let d = c.d_throttle_d_wp[k] * ga[0] + c.d_steer_d_wp[k] * ga[1];
                d_out[2 * k] = d.x;
                d_out[2 * k + 1] = d.y;
            }
            let d_features = model.backward(&step_tape.cache, &d_out, None);
            features_vjp(&result.states[t], &step_tape.features, &d_features, &mut prev);
        }
        adj = prev;
    }
    Ok(PlanGradient { d_cost_d_raw: grad })
}
