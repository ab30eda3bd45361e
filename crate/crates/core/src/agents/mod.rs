//! Ego-side driving components: controllers, rule-based and privileged
//! drivers, and the learned waypoint policy.

pub mod controllers;
pub mod drivers;
pub mod features;
pub mod policy;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::MapSet;
use crate::kinematics::BicycleParams;
use crate::route::Route;
use crate::scenario::{Action, ActionPlan, ScenarioSpec, TrafficState, Vec2};
use crate::sim::{Mode, Simulator};

pub use controllers::{controllers, controllers_with_jacobian, ControllerJacobian, ControllerParams};
pub use drivers::{privileged_expert, rule_based_ego, ExpertEgo, OpenLoopEgo, RuleBasedEgo, StubEgo};
pub use features::{extract_features, features_vjp, FeatureTape, FeatureVector, FEATURE_LEN, K_NEAREST};
pub use policy::{fine_tune, train_policy, DemoDataset, DemoPair, DemoTag, PolicyModel, TrainConfig};

/// Four future points in the ego's current frame.
pub type Waypoints = [Vec2; 4];

pub const STOP_WAYPOINTS: Waypoints = [Vec2::new(0.0, 0.0); 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriverParams {
    pub cruise_speed: f64,
    /// Extra length added to the braking distance of the hazard region.
    pub hazard_margin: f64,
    /// Multiplier on `v^2 / (2 * max_brake)` for the hazard region length.
    pub hazard_gain: f64,
    pub hazard_lateral_margin: f64,
    /// Expert forecast length in simulation steps.
    pub expert_horizon: usize,
    /// Candidate speeds as fractions of cruise, fastest first.
    pub expert_profiles: Vec<f64>,
    /// Inflation of ego and adversary boxes in the expert's collision check.
    pub expert_box_margin: f64,
    /// Distance along the route to the goal point given to the policy.
    pub goal_lookahead: f64,
    pub controller: ControllerParams,
}

impl Default for DriverParams {
    fn default() -> Self {
        Self {
            cruise_speed: 6.0,
            hazard_margin: 1.0,
            hazard_gain: 2.0,
            hazard_lateral_margin: 0.25,
            expert_horizon: 16,
            expert_profiles: vec![1.0, 0.6, 0.3, 0.0],
            expert_box_margin: 0.3,
            goal_lookahead: 10.0,
            controller: ControllerParams::default(),
        }
    }
}

impl DriverParams {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        let bad = |field, msg: &str| Err(Error::InvalidValue { field, msg: msg.into() });
        if !(self.cruise_speed > 0.0 && self.cruise_speed.is_finite()) {
            return bad("cruise_speed", "must be positive");
        }
        if !(self.hazard_margin >= 0.0 && self.hazard_gain >= 0.0 && self.hazard_lateral_margin >= 0.0) {
            return bad("hazard_margin", "hazard parameters must be non-negative");
        }
        if self.expert_horizon == 0 {
            return bad("expert_horizon", "must be at least 1");
        }
        if self.expert_profiles.iter().any(|f| !(0.0..=2.0).contains(f)) {
            return bad("expert_profiles", "fractions must lie in [0, 2]");
        }
        if !(self.controller.waypoint_interval > 0.0) {
            return bad("waypoint_interval", "must be positive");
        }
        Ok(())
    }
}

/// Everything an ego driver may look at when choosing its next action.
/// `plan` is privileged and only the expert reads it.
pub struct EgoContext<'a> {
    pub t: usize,
    pub state: &'a TrafficState,
    pub plan: &'a ActionPlan,
    pub route: &'a Route,
    pub kin: &'a BicycleParams,
}

/// Per-step record of the policy's forward pass.
#[derive(Debug, Clone)]
pub struct PolicyStepTape {
    pub features: FeatureTape,
    pub cache: policy::ForwardCache,
    pub controller: ControllerJacobian,
}

pub trait EgoAgent: Sync {
    fn name(&self) -> &str;

    fn act(&self, ctx: &EgoContext) -> Action;

    /// Act and, for differentiable drivers, keep what the backward pass needs.
    fn act_traced(&self, ctx: &EgoContext) -> (Action, Option<PolicyStepTape>) {
        (self.act(ctx), None)
    }

    fn policy(&self) -> Option<&PolicyModel> {
        None
    }
}

/// Transform a world point into the frame of an agent at `origin` facing
/// `heading`.
pub fn world_to_ego(origin: Vec2, heading: f64, p: Vec2) -> Vec2 {
    let (s, c) = heading.sin_cos();
    let d = p - origin;
    Vec2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
}

/// Driver using the learned waypoint policy.
#[derive(Debug, Clone)]
pub struct PolicyEgo {
    pub model: PolicyModel,
    pub params: DriverParams,
}

impl PolicyEgo {
    pub fn new(model: PolicyModel, params: DriverParams) -> Self {
        Self { model, params }
    }

    /// Route point `goal_lookahead` meters past the ego's projection, and its
    /// derivative with respect to the ego position.
    pub fn goal(&self, state: &TrafficState, route: &Route) -> (Vec2, Matrix2<f64>) {
        policy_goal(state, route, self.params.goal_lookahead)
    }
}

pub fn policy_goal(state: &TrafficState, route: &Route, lookahead: f64) -> (Vec2, Matrix2<f64>) {
    let ego = state.ego();
    let (s0, ds) = route.project_with_grad(ego.position, Some(ego.heading));
    let s = s0 + lookahead;
    if s >= route.length() {
        return (route.end(), Matrix2::zeros());
    }
    (route.point_at(s), route.tangent_at(s) * ds.transpose())
}

/// Feature vector the policy sees in this state.
pub fn policy_features(state: &TrafficState, route: &Route, lookahead: f64) -> (FeatureVector, FeatureTape) {
    let (goal, jac) = policy_goal(state, route, lookahead);
    let (f, mut tape) = extract_features(state, goal);
    tape.d_goal_d_position = jac;
    (f, tape)
}

impl EgoAgent for PolicyEgo {
    fn name(&self) -> &str {
        "policy"
    }

    fn act(&self, ctx: &EgoContext) -> Action {
        self.act_traced(ctx).0
    }

    fn act_traced(&self, ctx: &EgoContext) -> (Action, Option<PolicyStepTape>) {
        let (f, features) = policy_features(ctx.state, ctx.route, self.params.goal_lookahead);
        let (y, cache) = self.model.forward(&f);
        let wp = policy::outputs_to_waypoints(&y);
        let (action, controller) = controllers_with_jacobian(&wp, ctx.state.ego(), &self.params.controller);
        (
            action,
            Some(PolicyStepTape {
                features,
                cache,
                controller,
            }),
        )
    }

    fn policy(&self) -> Option<&PolicyModel> {
        Some(&self.model)
    }
}

/// Roll every scenario out with the expert and record the policy features
/// alongside the expert's waypoints at each realized step.
pub fn collect_demos(
    specs: &[ScenarioSpec],
    tag: DemoTag,
    params: &DriverParams,
    kin: &BicycleParams,
    maps: &MapSet,
) -> Result<DemoDataset> {
    let expert = ExpertEgo::new(params.clone());
    let mut data = DemoDataset::default();
    for spec in specs {
        let map = maps.get(&spec.map_id)?;
        let sim = Simulator::new(map, *kin, Default::default());
        let result = sim.rollout(spec, &expert, Mode::NoRecord)?;
        let route = Route::new(&spec.ego_route);
        let kin = BicycleParams { dt: spec.dt, ..*kin };
        for (t, state) in result.states.iter().enumerate().take(result.states.len() - 1) {
            let (f, _) = policy_features(state, &route, params.goal_lookahead);
            let ctx = EgoContext {
                t,
                state,
                plan: &spec.initial_plan,
                route: &route,
                kin: &kin,
            };
            let wp = expert.waypoints(&ctx);
            data.pairs.push(DemoPair::new(&f, &wp, tag));
        }
    }
    Ok(data)
}
