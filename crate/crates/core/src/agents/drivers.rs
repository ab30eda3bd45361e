//! Hand-written ego drivers.

use crate::error::{Error, Result};
use crate::geometry::{boxes_overlap, OrientedBox};
use crate::kinematics::{step, BicycleParams};
use crate::route::Route;
use crate::scenario::{Action, ActionPlan, AgentState, TrafficState};

use super::{controllers, world_to_ego, DriverParams, EgoAgent, EgoContext, Waypoints, STOP_WAYPOINTS};

/// Route points reached after 1..=4 waypoint intervals at `speed`, in the
/// ego frame. Points past the route end are clamped to it.
pub fn route_waypoints(ego: &AgentState, route: &Route, s0: f64, speed: f64, interval: f64) -> Waypoints {
    [1.0, 2.0, 3.0, 4.0].map(|k| world_to_ego(ego.position, ego.heading, route.point_at(s0 + k * speed * interval)))
}

/// Rectangle ahead of the ego's front bumper that must be clear to keep
/// driving.
pub fn hazard_region(ego: &AgentState, params: &DriverParams, kin: &BicycleParams) -> OrientedBox {
    let length = params.hazard_gain * ego.speed * ego.speed / (2.0 * kin.max_brake) + params.hazard_margin;
    let center = ego.position + ego.forward() * (ego.half_length + length * 0.5);
    OrientedBox::new(
        center,
        ego.heading,
        length * 0.5,
        ego.half_width + params.hazard_lateral_margin,
    )
}

pub fn hazard_ahead(state: &TrafficState, params: &DriverParams, kin: &BicycleParams) -> bool {
    let region = hazard_region(state.ego(), params, kin);
    state.agents[1..].iter().any(|a| boxes_overlap(&region, &a.bbox()))
}

fn route_progress(state: &TrafficState, route: &Route) -> Result<f64> {
    let ego = state.ego();
    let s0 = route.project(ego.position, Some(ego.heading));
    if s0 >= route.length() {
        return Err(Error::RouteExhausted);
    }
    Ok(s0)
}

/// Follow the route at cruise speed, stopping for anything in the hazard
/// region.
pub fn rule_based_ego(
    state: &TrafficState,
    route: &Route,
    params: &DriverParams,
    kin: &BicycleParams,
) -> Result<Waypoints> {
    let s0 = route_progress(state, route)?;
    if hazard_ahead(state, params, kin) {
        return Ok(STOP_WAYPOINTS);
    }
    Ok(route_waypoints(
        state.ego(),
        route,
        s0,
        params.cruise_speed,
        params.controller.waypoint_interval,
    ))
}

/// Adversary states over the next `horizon` steps, from their known plans.
/// Plan actions past the end of the plan are zero.
pub fn forecast_adversaries(
    state: &TrafficState,
    plan: &ActionPlan,
    t: usize,
    horizon: usize,
    kin: &BicycleParams,
) -> Vec<Vec<AgentState>> {
    let mut cur: Vec<AgentState> = state.agents[1..].to_vec();
    let mut out = Vec::with_capacity(horizon);
    for k in 0..horizon {
        for (j, a) in cur.iter_mut().enumerate() {
            let tk = t + k;
            let action = if j < plan.n_agents() && tk < plan.horizon() {
                plan.action(j, tk)
            } else {
                Action::new(0.0, 0.0)
            };
            *a = step(a, action, kin);
        }
        out.push(cur.clone());
    }
    out
}

fn inflate(b: OrientedBox, m: f64) -> OrientedBox {
    OrientedBox::new(b.center, b.heading, b.half_length + m, b.half_width + m)
}

/// Pick the fastest candidate speed profile whose route-following sweep
/// stays clear of every forecast adversary box.
pub fn privileged_expert(
    state: &TrafficState,
    plan: &ActionPlan,
    t: usize,
    route: &Route,
    params: &DriverParams,
    kin: &BicycleParams,
) -> Waypoints {
    let Ok(s0) = route_progress(state, route) else {
        return STOP_WAYPOINTS;
    };
    let ego = state.ego();
    let forecast = if state.agents.len() > 1 {
        forecast_adversaries(state, plan, t, params.expert_horizon, kin)
    } else {
        Vec::new()
    };
    let adv_boxes: Vec<Vec<OrientedBox>> = forecast
        .iter()
        .map(|agents| {
            agents
                .iter()
                .map(|a| inflate(a.bbox(), params.expert_box_margin))
                .collect()
        })
        .collect();

    for &frac in &params.expert_profiles {
        let target = frac * params.cruise_speed;
        let clear = adv_boxes.is_empty() || {
            let (mut s, mut v) = (s0, ego.speed);
            let mut ok = true;
            for boxes in &adv_boxes {
                v = if v < target {
                    (v + kin.max_accel * kin.dt).min(target)
                } else {
                    (v - kin.max_brake * kin.dt).max(target)
                };
                s += v * kin.dt;
                let pose = OrientedBox::new(
                    route.point_at(s),
                    route.heading_at(s),
                    ego.half_length + params.expert_box_margin,
                    ego.half_width + params.expert_box_margin,
                );
                if boxes.iter().any(|b| boxes_overlap(&pose, b)) {
                    ok = false;
                    break;
                }
            }
            ok
        };
        if clear {
            if target < params.controller.stop_speed {
                return STOP_WAYPOINTS;
            }
            return route_waypoints(ego, route, s0, target, params.controller.waypoint_interval);
        }
    }
    STOP_WAYPOINTS
}

#[derive(Debug, Clone, Default)]
pub struct RuleBasedEgo {
    pub params: DriverParams,
}

impl RuleBasedEgo {
    pub fn new(params: DriverParams) -> Self {
        Self { params }
    }
}

impl EgoAgent for RuleBasedEgo {
    fn name(&self) -> &str {
        "rule_based"
    }

    fn act(&self, ctx: &EgoContext) -> Action {
        let wp = rule_based_ego(ctx.state, ctx.route, &self.params, ctx.kin).unwrap_or(STOP_WAYPOINTS);
        controllers(&wp, ctx.state.ego(), &self.params.controller)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExpertEgo {
    pub params: DriverParams,
}

impl ExpertEgo {
    pub fn new(params: DriverParams) -> Self {
        Self { params }
    }

    pub fn waypoints(&self, ctx: &EgoContext) -> Waypoints {
        privileged_expert(ctx.state, ctx.plan, ctx.t, ctx.route, &self.params, ctx.kin)
    }
}

impl EgoAgent for ExpertEgo {
    fn name(&self) -> &str {
        "expert"
    }

    fn act(&self, ctx: &EgoContext) -> Action {
        controllers(&self.waypoints(ctx), ctx.state.ego(), &self.params.controller)
    }
}

/// Replays a fixed action sequence regardless of what happens around it.
#[derive(Debug, Clone, Default)]
pub struct OpenLoopEgo {
    pub actions: Vec<Action>,
}

impl EgoAgent for OpenLoopEgo {
    fn name(&self) -> &str {
        "open_loop"
    }

    fn act(&self, ctx: &EgoContext) -> Action {
        self.actions.get(ctx.t).copied().unwrap_or(Action::new(0.0, 0.0))
    }
}

/// Applies the same action every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StubEgo {
    pub action: Action,
}

impl StubEgo {
    /// Holds its speed and heading.
    pub fn coasting() -> Self {
        Self {
            action: Action::new(0.0, 0.0),
        }
    }

    pub fn braking() -> Self {
        Self {
            action: Action::new(-1.0, 0.0),
        }
    }
}

impl EgoAgent for StubEgo {
    fn name(&self) -> &str {
        "stub"
    }

    fn act(&self, _ctx: &EgoContext) -> Action {
        self.action
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Vec2;

    fn straight_route() -> Route {
        Route::new(&[Vec2::new(0.0, 0.0), Vec2::new(200.0, 0.0)])
    }

    fn state_with(adv: Option<AgentState>, ego_speed: f64) -> TrafficState {
        let mut agents = vec![AgentState::new(Vec2::new(10.0, 0.0), 0.0, ego_speed)];
        agents.extend(adv);
        TrafficState { agents }
    }

    #[test]
    fn empty_road_advances_at_cruise() {
        let p = DriverParams::default();
        let kin = BicycleParams::default();
        let wp = rule_based_ego(&state_with(None, 6.0), &straight_route(), &p, &kin).unwrap();
        for (k, w) in wp.iter().enumerate() {
            assert!((w.x - 3.0 * (k + 1) as f64).abs() < 1e-12);
            assert!(w.y.abs() < 1e-12);
        }
        let a = controllers(&wp, &state_with(None, 6.0).agents[0], &p.controller);
        assert_eq!(a, Action::new(0.0, 0.0));
    }

    #[test]
    fn stopped_vehicle_ahead_triggers_stop() {
        let p = DriverParams::default();
        let kin = BicycleParams::default();
        // 3 m bumper gap
        let adv = AgentState::new(Vec2::new(10.0 + 2.0 * 2.45 + 3.0, 0.0), 0.0, 0.0);
        let wp = rule_based_ego(&state_with(Some(adv), 6.0), &straight_route(), &p, &kin).unwrap();
        assert_eq!(wp, STOP_WAYPOINTS);
    }

    #[test]
    fn route_exhausted_past_end() {
        let p = DriverParams::default();
        let kin = BicycleParams::default();
        let s = TrafficState {
            agents: vec![AgentState::new(Vec2::new(205.0, 0.0), 0.0, 3.0)],
        };
        assert!(matches!(
            rule_based_ego(&s, &straight_route(), &p, &kin),
            Err(Error::RouteExhausted)
        ));
    }

    #[test]
    fn hazard_decision_matches_region_oracle() {
        let p = DriverParams::default();
        let kin = BicycleParams::default();
        let route = straight_route();
        for speed in [0.0, 3.0, 6.0, 9.0] {
            let length = p.hazard_gain * speed * speed / (2.0 * kin.max_brake) + p.hazard_margin;
            let (x0, x1) = (10.0 + 2.45, 10.0 + 2.45 + length);
            let hw = 1.0 + p.hazard_lateral_margin;
            for i in 0..60 {
                for j in 0..30 {
                    let c = Vec2::new(4.0 + i as f64 * 0.5, -7.5 + j as f64 * 0.5);
                    // axis-aligned adversary: interval overlap is exact
                    let adv = AgentState::new(c, 0.0, 0.0);
                    let overlap = c.x + 2.45 >= x0 && c.x - 2.45 <= x1 && c.y + 1.0 >= -hw && c.y - 1.0 <= hw;
                    let s = state_with(Some(adv), speed);
                    if boxes_overlap(&s.agents[0].bbox(), &adv.bbox()) {
                        continue;
                    }
                    let wp = rule_based_ego(&s, &route, &p, &kin).unwrap();
                    assert_eq!(wp == STOP_WAYPOINTS, overlap, "speed {speed} at {c:?}");
                }
            }
        }
    }

    #[test]
    fn expert_matches_rule_based_on_empty_road() {
        let p = DriverParams::default();
        let kin = BicycleParams::default();
        let s = state_with(None, 4.0);
        let plan = ActionPlan::zeros(0, 10);
        assert_eq!(
            privileged_expert(&s, &plan, 0, &straight_route(), &p, &kin),
            rule_based_ego(&s, &straight_route(), &p, &kin).unwrap()
        );
    }

    #[test]
    fn expert_yields_to_crossing_adversary() {
        let p = DriverParams::default();
        let kin = BicycleParams::default();
        // crosses the ego lane at x = 24 about two seconds from now
        let adv = AgentState::new(Vec2::new(24.0, -12.0), std::f64::consts::FRAC_PI_2, 6.0);
        let s = state_with(Some(adv), 6.0);
        let plan = ActionPlan::zeros(1, 40);
        let wp = privileged_expert(&s, &plan, 0, &straight_route(), &p, &kin);
        let full = route_waypoints(&s.agents[0], &straight_route(), 10.0, 6.0, 0.5);
        assert_ne!(wp, full);
    }
}
