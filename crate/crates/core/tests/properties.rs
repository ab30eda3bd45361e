mod common;

use std::sync::OnceLock;

use critsim::agents::{controllers, ControllerParams, PolicyModel, RuleBasedEgo, FEATURE_LEN};
use critsim::costs::{phi_adv_col, phi_dev, phi_ego};
use critsim::geometry::{box_distance, boxes_overlap, MapModel, OrientedBox};
use critsim::harness::{CellSummary, ScenarioRow};
use critsim::kinematics::{step, step_with_jacobians, BicycleParams};
use critsim::mapgen::{generate_map, MapTemplate, TemplateKind};
use critsim::route::Route;
use critsim::scenario::{
    deserialize_scenario, serialize_scenario, squash, unsquash, Action, ActionPlan, AgentState, ScenarioSpec,
    TrafficState, Vec2, VerdictKind,
};
use critsim::sim::{Mode, Simulator};
use proptest::prelude::*;

fn maps() -> &'static [MapModel] {
    static MAPS: OnceLock<Vec<MapModel>> = OnceLock::new();
    MAPS.get_or_init(common::desk_maps)
}

fn short_specs() -> &'static [ScenarioSpec] {
    static SPECS: OnceLock<Vec<ScenarioSpec>> = OnceLock::new();
    SPECS.get_or_init(|| common::random_short_scenarios(maps(), 48, 20, 5))
}

fn map_for(spec: &ScenarioSpec) -> &'static MapModel {
    maps().iter().find(|m| m.map_id == spec.map_id).unwrap()
}

fn agent() -> impl Strategy<Value = AgentState> {
    (-30.0..30.0f64, -30.0..30.0f64, -3.2..3.2f64, 0.0..12.0f64)
        .prop_map(|(x, y, h, v)| AgentState::new(Vec2::new(x, y), h, v))
}

fn obox() -> impl Strategy<Value = OrientedBox> {
    (-6.0..6.0f64, -6.0..6.0f64, -3.2..3.2f64, 0.3..3.0f64, 0.3..1.5f64)
        .prop_map(|(x, y, h, l, w)| OrientedBox::new(Vec2::new(x, y), h, l, w))
}

/// `steps` snapshots of `n` agents scattered around the origin.
fn sequence(n: usize, steps: usize) -> impl Strategy<Value = Vec<TrafficState>> {
    proptest::collection::vec(proptest::collection::vec(agent(), n), steps)
        .prop_map(|s| s.into_iter().map(|agents| TrafficState { agents }).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn squash_is_a_bijection_onto_the_open_interval(raw in -8.0..8.0f64, a in -0.999_999..0.999_999f64) {
        let s = squash(raw);
        prop_assert!(s > -1.0 && s < 1.0);
        prop_assert!((unsquash(s) - raw).abs() < 1e-8);
        prop_assert!((squash(unsquash(a)) - a).abs() < 1e-12);
        prop_assert_eq!(squash(-raw), -s);
    }

    #[test]
    fn scenario_json_round_trip_is_identity(
        agents in proptest::collection::vec(agent(), 2..6),
        horizon in 1usize..6,
        seed in any::<u64>(),
        dt in 0.01..1.0f64,
        route in proptest::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 2..6),
        raw_seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let n_adv = agents.len() - 1;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(raw_seed);
        let raw = (0..n_adv * horizon * 2).map(|_| rng.random_range(-3.0..3.0)).collect();
        let ego_route: Vec<Vec2> = route.iter().map(|&(x, y)| Vec2::new(x, y)).collect();
        let spec = ScenarioSpec {
            map_id: "m".into(),
            horizon,
            dt,
            ego_goal: *ego_route.last().unwrap(),
            ego_route,
            initial_state: TrafficState { agents },
            initial_plan: ActionPlan::from_raw(n_adv, horizon, raw).unwrap(),
            seed,
        };
        let back = deserialize_scenario(&serialize_scenario(&spec)).unwrap();
        prop_assert_eq!(back, spec);
    }

    #[test]
    fn zero_steer_keeps_heading_and_zero_throttle_keeps_speed(s in agent(), u in -1.0..1.0f64) {
        let p = BicycleParams::default();
        prop_assert_eq!(step(&s, Action::new(u, 0.0), &p).heading, s.heading);
        prop_assert_eq!(step(&s, Action::new(0.0, u), &p).speed, s.speed);
    }

    #[test]
    fn speed_stays_non_negative_and_turning_is_bounded(s in agent(), t in -1.0..1.0f64, d in -1.0..1.0f64) {
        let p = BicycleParams::default();
        let next = step(&s, Action::new(t, d), &p);
        prop_assert!(next.speed >= 0.0);
        let wrapped = critsim::scenario::normalize_angle(next.heading - s.heading);
        let turn = wrapped.min(std::f64::consts::TAU - wrapped);
        prop_assert!(turn <= p.max_heading_rate(s.speed) * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn traced_step_matches_plain_step_bitwise(s in agent(), t in -1.5..1.5f64, d in -1.5..1.5f64) {
        let p = BicycleParams::default();
        let a = Action::new(t, d);
        prop_assert_eq!(step_with_jacobians(&s, a, &p).0, step(&s, a, &p));
    }

    #[test]
    fn box_distance_is_symmetric(a in obox(), b in obox()) {
        prop_assert_eq!(box_distance(&a, &b).distance, box_distance(&b, &a).distance);
    }

    #[test]
    fn zero_distance_iff_overlap(a in obox(), b in obox()) {
        let d = box_distance(&a, &b).distance;
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d == 0.0, boxes_overlap(&a, &b));
    }

    #[test]
    fn box_distance_is_translation_invariant(a in obox(), b in obox(), tx in -100.0..100.0f64, ty in -100.0..100.0f64) {
        let shift = Vec2::new(tx, ty);
        let moved = |o: &OrientedBox| OrientedBox::new(o.center + shift, o.heading, o.half_length, o.half_width);
        let d0 = box_distance(&a, &b).distance;
        let d1 = box_distance(&moved(&a), &moved(&b)).distance;
        prop_assert!((d0 - d1).abs() <= 1e-9, "{} vs {}", d0, d1);
        prop_assert_eq!(boxes_overlap(&a, &b), boxes_overlap(&moved(&a), &moved(&b)));
    }

    #[test]
    fn offroad_field_is_bounded_and_lipschitz(
        m in 0usize..4, x in -70.0..70.0f64, y in -70.0..70.0f64,
        dx in -1e-3..1e-3f64, dy in -1e-3..1e-3f64,
    ) {
        let map = &maps()[m];
        let p = Vec2::new(x, y);
        let (v, _) = map.offroad_field(p, 1.5);
        prop_assert!((0.0..=1.0).contains(&v));
        let (w, _) = map.offroad_field(p + Vec2::new(dx, dy), 1.5);
        // sdf slope stays near 1, the Gaussian's slope is at most 1 / sigma
        prop_assert!((v - w).abs() <= 2.0 * Vec2::new(dx, dy).norm() + 1e-12);
    }

    #[test]
    fn cost_terms_stay_in_range(states in sequence(4, 6), m in 0usize..4) {
        let tau = 2.0;
        let ego = phi_ego(&states, 5).unwrap();
        prop_assert!(ego.value >= 0.0);
        let adv = phi_adv_col(&states, tau);
        prop_assert!((-tau..=0.0).contains(&adv.value));
        let dev = phi_dev(&states, &maps()[m], 1.5);
        prop_assert!(dev.value >= 0.0 && dev.value <= 3.0 * states.len() as f64);
    }

    #[test]
    fn phi_ego_weakly_decreases_when_closest_adversary_approaches(states in sequence(3, 5), shrink in 0.0..1.0f64) {
        let before = phi_ego(&states, 4).unwrap();
        let arg = (1..3)
            .min_by(|&i, &j| {
                let s = |k: usize| states.iter().map(|st| box_distance(&st.agents[0].bbox(), &st.agents[k].bbox()).distance).sum::<f64>();
                s(i).total_cmp(&s(j))
            })
            .unwrap();
        // Scaling the offset toward the ego can only shrink each box distance.
        let closer: Vec<TrafficState> = states
            .iter()
            .map(|st| {
                let mut st = st.clone();
                let ego = st.agents[0].position;
                st.agents[arg].position = ego + (st.agents[arg].position - ego) * shrink;
                st
            })
            .collect();
        prop_assert!(phi_ego(&closer, 4).unwrap().value <= before.value + 1e-12);
    }

    #[test]
    fn separated_pairs_leave_adversary_term_flat(offsets in proptest::collection::vec(0.0..3.0f64, 3)) {
        // adversaries 12 m apart along x, far more than tau
        let states: Vec<TrafficState> = offsets
            .iter()
            .map(|&o| TrafficState {
                agents: (0..4).map(|i| AgentState::new(Vec2::new(12.0 * i as f64 + o, 0.0), 0.0, 1.0)).collect(),
            })
            .collect();
        let t = phi_adv_col(&states, 2.0);
        prop_assert_eq!(t.value, -2.0);
        prop_assert!(t.grad.iter().flatten().all(|g| g.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn controllers_output_stays_in_the_unit_box(
        pts in proptest::collection::vec((-40.0..40.0f64, -40.0..40.0f64), 4),
        s in agent(),
    ) {
        let wp = [0, 1, 2, 3].map(|k| Vec2::new(pts[k].0, pts[k].1));
        let a = controllers(&wp, &s, &ControllerParams::default());
        prop_assert!(a.throttle.abs() <= 1.0 && a.steer.abs() <= 1.0);
    }

    #[test]
    fn policy_backward_is_finite(x in proptest::collection::vec(-50.0..50.0f64, FEATURE_LEN), seed in 0u64..4) {
        let model = PolicyModel::new(seed);
        let mut f = [0.0; FEATURE_LEN];
        f.copy_from_slice(&x);
        let (y, cache) = model.forward(&f.into());
        prop_assert!(y.iter().all(|v| v.is_finite()));
        let d = model.backward(&cache, &[1.0; 8], None);
        prop_assert!(d.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn t50_is_absent_exactly_below_half(outcomes in proptest::collection::vec(proptest::option::of(0.0..30.0f64), 1..40)) {
        let rows: Vec<ScenarioRow> = outcomes
            .iter()
            .enumerate()
            .map(|(i, t)| ScenarioRow {
                scenario: format!("{i:03}"),
                method: "random_search".into(),
                density: 1,
                success: t.is_some(),
                verdict: if t.is_some() { "ego_collision" } else { "no_collision" }.into(),
                time_index: None,
                iterations: 1,
                best_cost: 0.0,
                error: None,
                wall_time: t.unwrap_or(30.0),
                time_to_success: *t,
                s_per_it: Some(1.0),
            })
            .collect();
        let c = CellSummary::from_rows("random_search", Some(1), rows.iter());
        prop_assert_eq!(c.t50.is_none(), c.cr < 50.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rollouts_are_deterministic(k in 0usize..48) {
        let spec = &short_specs()[k];
        let sim = Simulator::new(map_for(spec), BicycleParams::default(), Default::default());
        let ego = RuleBasedEgo::default();
        let a = sim.rollout(spec, &ego, Mode::Record).unwrap();
        let b = sim.rollout(spec, &ego, Mode::NoRecord).unwrap();
        prop_assert_eq!(&a.states, &b.states);
        prop_assert_eq!(a.verdict, b.verdict);
        prop_assert_eq!(a.total_cost().to_bits(), b.total_cost().to_bits());
    }

    #[test]
    fn gradient_vanishes_past_termination(k in 0usize..48) {
        let spec = &short_specs()[k];
        let sim = Simulator::new(map_for(spec), BicycleParams::default(), Default::default());
        let r = sim.rollout(spec, &RuleBasedEgo::default(), Mode::Record).unwrap();
        let g = sim.backward_direct(&r).unwrap();
        let end = r.steps();
        for i in 0..spec.num_adversaries() {
            for t in end..spec.horizon {
                let k = spec.initial_plan.index(i, t);
                prop_assert_eq!(g.d_cost_d_raw[k], 0.0);
                prop_assert_eq!(g.d_cost_d_raw[k + 1], 0.0);
            }
        }
    }

    #[test]
    fn deviation_is_bounded_on_rollouts(k in 0usize..48) {
        let spec = &short_specs()[k];
        let map = map_for(spec);
        let sim = Simulator::new(map, BicycleParams::default(), Default::default());
        let r = sim.rollout(spec, &RuleBasedEgo::default(), Mode::NoRecord).unwrap();
        let n = spec.num_adversaries() as f64;
        let dev = phi_dev(&r.states, map, 1.5).value;
        // the initial state is on the road, so only T states can saturate
        prop_assert!(dev >= 0.0 && dev <= n * spec.horizon as f64 + n);
        prop_assert!(phi_dev(&r.states[..1], map, 1.5).value < n);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn map_generation_is_pure_and_routes_keep_clearance(kind in 0usize..5, seed in 0u64..1000) {
        let tpl = MapTemplate::new(TemplateKind::ALL[kind], seed);
        let a = generate_map(&tpl).unwrap();
        let b = generate_map(&tpl).unwrap();
        prop_assert_eq!(&a, &b);
        for r in &a.routes {
            let route = Route::new(&r.points).resampled(0.5);
            for p in route.points() {
                prop_assert!(a.exact_sdf(*p) >= 1.0, "{} {} at {:?}", a.map_id, r.name, p);
            }
        }
    }

    #[test]
    fn built_scenarios_start_safe(seed in 0u64..10_000) {
        let specs = critsim::mapgen::sample_benchmark(
            maps(), 1, &[1, 2, 4], seed, &RuleBasedEgo::default(), &BicycleParams::default(), &Default::default(),
        ).unwrap();
        for spec in &specs {
            let sim = Simulator::new(map_for(spec), BicycleParams::default(), Default::default());
            let r = sim.rollout(spec, &RuleBasedEgo::default(), Mode::NoRecord).unwrap();
            prop_assert_eq!(r.verdict.kind, VerdictKind::NoCollision);
        }
    }
}
