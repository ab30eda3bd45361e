//! Construction of non-critical starting scenarios: adversaries drive their
//! own routes with the rule-based driver and their actions are recorded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{controllers, rule_based_ego, DriverParams, EgoAgent, EgoContext, STOP_WAYPOINTS};
use crate::costs::CostWeights;
use crate::error::{Error, Result};
use crate::geometry::MapModel;
use crate::kinematics::{step, BicycleParams};
use crate::route::Route;
use crate::scenario::{unsquash, ActionPlan, AgentState, ScenarioSpec, TrafficState, Vec2, VerdictKind};
use crate::sim::{classify, Mode, Simulator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    /// An adversary route must come this close to the ego route.
    pub proximity_radius: f64,
    /// Initial speeds are drawn uniformly from this fraction range of cruise.
    pub initial_speed_range: (f64, f64),
    pub driver: DriverParams,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            proximity_radius: 8.0,
            initial_speed_range: (0.5, 1.0),
            driver: DriverParams::default(),
        }
    }
}

fn start_state(route: &Route, speed: f64) -> AgentState {
    AgentState::new(route.start(), route.heading_at(0.0), speed)
}

/// Traffic state as seen from agent `i`: that agent first, then the rest in
/// their original order.
fn view_from(state: &TrafficState, i: usize) -> TrafficState {
    let mut agents = Vec::with_capacity(state.agents.len());
    agents.push(state.agents[i]);
    agents.extend(
        state
            .agents
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, a)| *a),
    );
    TrafficState { agents }
}

/// Build a scenario whose initial plan replays adversaries that follow their
/// routes and brake for hazards. The recording is made against `ego` and
/// certified by a rollout with the same ego.
#[allow(clippy::too_many_arguments)]
pub fn build_initial_scenario(
    map: &MapModel,
    ego_route: &[Vec2],
    adversary_routes: &[Vec<Vec2>],
    horizon: usize,
    dt: f64,
    seed: u64,
    ego: &dyn EgoAgent,
    kin: &BicycleParams,
    cfg: &BuildConfig,
) -> Result<ScenarioSpec> {
    if horizon == 0 || !(dt > 0.0) {
        return Err(Error::InvalidValue {
            field: "horizon",
            msg: "horizon must be at least 1 and dt positive".into(),
        });
    }
    if ego_route.len() < 2 || adversary_routes.iter().any(|r| r.len() < 2) {
        return Err(Error::RouteInfeasible("routes need at least two points".into()));
    }
    let ego_r = Route::new(ego_route);
    let adv_r: Vec<Route> = adversary_routes.iter().map(|r| Route::new(r)).collect();
    if !adv_r.is_empty() && adv_r.iter().all(|r| r.min_distance_to(&ego_r) > cfg.proximity_radius) {
        return Err(Error::ProximityUnmet {
            radius: cfg.proximity_radius,
        });
    }
    for (k, r) in std::iter::once(&ego_r).chain(&adv_r).enumerate() {
        if r.points().iter().any(|p| !map.inside(*p)) {
            return Err(Error::RouteInfeasible(format!("route {k} leaves the drivable area")));
        }
    }

    let kin = BicycleParams { dt, ..*kin };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = cfg.initial_speed_range;
    let mut speed = || cfg.driver.cruise_speed * rng.random_range(lo..=hi);
    let mut agents = vec![start_state(&ego_r, speed())];
    agents.extend(adv_r.iter().map(|r| start_state(r, speed())));
    let initial = TrafficState { agents };
    if let Some(v) = classify(&initial, map, 0) {
        return Err(Error::RouteInfeasible(format!(
            "initial placement already terminates ({})",
            v.kind.as_str()
        )));
    }

    let n_adv = adv_r.len();
    let mut plan = ActionPlan::zeros(n_adv, horizon);
    let mut state = initial.clone();
    for t in 0..horizon {
        let ctx = EgoContext {
            t,
            state: &state,
            plan: &plan,
            route: &ego_r,
            kin: &kin,
        };
        let ego_action = ego.act(&ctx);
        for (j, route) in adv_r.iter().enumerate() {
            let view = view_from(&state, j + 1);
            let wp = rule_based_ego(&view, route, &cfg.driver, &kin).unwrap_or(STOP_WAYPOINTS);
            let a = controllers(&wp, &view.agents[0], &cfg.driver.controller);
            let k = plan.index(j, t);
            let raw = plan.raw_mut();
            raw[k] = unsquash(a.throttle);
            raw[k + 1] = unsquash(a.steer);
        }
        let mut next = state.clone();
        for (i, agent) in next.agents.iter_mut().enumerate() {
            let action = if i == 0 { ego_action } else { plan.action(i - 1, t) };
            *agent = step(agent, action, &kin);
        }
        if let Some(v) = classify(&next, map, t + 1) {
            return Err(Error::RouteInfeasible(format!(
                "recorded traffic ends in {} at step {}",
                v.kind.as_str(),
                t + 1
            )));
        }
        state = next;
    }

    let spec = ScenarioSpec {
        map_id: map.map_id.clone(),
        horizon,
        dt,
        ego_route: ego_route.to_vec(),
        ego_goal: ego_r.end(),
        initial_state: initial,
        initial_plan: plan,
        seed,
    };
    let sim = Simulator::new(map, kin, CostWeights::default());
    let check = sim.rollout(&spec, ego, Mode::NoRecord)?;
    if check.verdict.kind != VerdictKind::NoCollision {
        return Err(Error::RouteInfeasible(format!(
            "replay of recorded plan ends in {}",
            check.verdict.kind.as_str()
        )));
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::RuleBasedEgo;
    use crate::geometry::{box_distance, boxes_overlap, Polygon};

    fn wide_road() -> MapModel {
        MapModel::new(
            "road",
            vec![Polygon::new(vec![
                Vec2::new(-10.0, -8.0),
                Vec2::new(210.0, -8.0),
                Vec2::new(210.0, 8.0),
                Vec2::new(-10.0, 8.0),
            ])],
            vec![],
            0.2,
        )
        .unwrap()
    }

    fn cross() -> MapModel {
        MapModel::new(
            "cross",
            vec![
                Polygon::new(vec![
                    Vec2::new(-60.0, -4.0),
                    Vec2::new(60.0, -4.0),
                    Vec2::new(60.0, 4.0),
                    Vec2::new(-60.0, 4.0),
                ]),
                Polygon::new(vec![
                    Vec2::new(-4.0, -60.0),
                    Vec2::new(4.0, -60.0),
                    Vec2::new(4.0, 60.0),
                    Vec2::new(-4.0, 60.0),
                ]),
            ],
            vec![],
            0.2,
        )
        .unwrap()
    }

    #[test]
    fn parallel_lane_adversary() {
        let map = wide_road();
        let ego = RuleBasedEgo::default();
        let spec = build_initial_scenario(
            &map,
            &[Vec2::new(0.0, -2.0), Vec2::new(200.0, -2.0)],
            &[vec![Vec2::new(8.0, 2.0), Vec2::new(200.0, 2.0)]],
            80,
            0.25,
            1,
            &ego,
            &BicycleParams::default(),
            &BuildConfig::default(),
        )
        .unwrap();
        assert_eq!(spec.initial_plan.horizon(), 80);
        assert_eq!(spec.initial_plan.n_agents(), 1);
        let sim = Simulator::new(&map, BicycleParams::default(), CostWeights::default());
        let r = sim.rollout(&spec, &ego, Mode::NoRecord).unwrap();
        assert_eq!(r.verdict.kind, VerdictKind::NoCollision);
        assert_eq!(r.states.len(), 81);
    }

    #[test]
    fn no_adversaries() {
        let map = wide_road();
        let spec = build_initial_scenario(
            &map,
            &[Vec2::new(0.0, -2.0), Vec2::new(200.0, -2.0)],
            &[],
            20,
            0.25,
            0,
            &RuleBasedEgo::default(),
            &BicycleParams::default(),
            &BuildConfig::default(),
        )
        .unwrap();
        assert_eq!(spec.num_adversaries(), 0);
        assert_eq!(spec.initial_plan.dim(), 0);
    }

    #[test]
    fn distant_route_rejected() {
        let map = wide_road();
        let far = build_initial_scenario(
            &map,
            &[Vec2::new(0.0, -6.0), Vec2::new(20.0, -6.0)],
            &[vec![Vec2::new(100.0, 6.0), Vec2::new(200.0, 6.0)]],
            20,
            0.25,
            0,
            &RuleBasedEgo::default(),
            &BicycleParams::default(),
            &BuildConfig::default(),
        );
        assert!(matches!(far, Err(Error::ProximityUnmet { .. })));
    }

    #[test]
    fn crossing_adversary_keeps_clear() {
        let map = cross();
        let ego = RuleBasedEgo::default();
        let mut built = 0;
        for seed in 0..8 {
            let spec = match build_initial_scenario(
                &map,
                &[Vec2::new(-55.0, -2.0), Vec2::new(55.0, -2.0)],
                &[vec![Vec2::new(2.0, -40.0 - seed as f64), Vec2::new(2.0, 55.0)]],
                80,
                0.25,
                seed,
                &ego,
                &BicycleParams::default(),
                &BuildConfig::default(),
            ) {
                Ok(s) => s,
                Err(Error::RouteInfeasible(_)) => continue,
                Err(e) => panic!("{e}"),
            };
            built += 1;
            let sim = Simulator::new(&map, BicycleParams::default(), CostWeights::default());
            let r = sim.rollout(&spec, &ego, Mode::NoRecord).unwrap();
            assert_eq!(r.verdict.kind, VerdictKind::NoCollision);
            for s in &r.states {
                let (a, b) = (s.agents[0].bbox(), s.agents[1].bbox());
                assert!(!boxes_overlap(&a, &b));
                assert!(box_distance(&a, &b).distance > 0.0);
            }
        }
        assert!(built > 0);
    }
}
