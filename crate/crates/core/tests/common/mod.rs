#![allow(dead_code)]

use critsim::agents::{EgoAgent, RuleBasedEgo};
use critsim::geometry::MapModel;
use critsim::kinematics::BicycleParams;
use critsim::mapgen::{desk_templates, generate_map, sample_benchmark, SampleConfig};
use critsim::scenario::ScenarioSpec;
use critsim::sim::{Mode, Simulator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn desk_maps() -> Vec<MapModel> {
    desk_templates(0).iter().map(|t| generate_map(t).unwrap()).collect()
}

/// `|a - b|` relative to the larger magnitude, with `floor` as the smallest
/// denominator.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Short-horizon scenarios with random adversary plans, `count` of them,
/// cycling through the densities.
pub fn random_short_scenarios(maps: &[MapModel], count: usize, horizon: usize, seed: u64) -> Vec<ScenarioSpec> {
    let cfg = SampleConfig {
        horizon,
        adversary_offset: (0.0, 25.0),
        ..Default::default()
    };
    let kin = BicycleParams::default();
    let ego = RuleBasedEgo::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut round = 0;
    while out.len() < count {
        let specs = sample_benchmark(maps, 2, &[1, 2, 4], seed.wrapping_add(round), &ego, &kin, &cfg).unwrap();
        for spec in specs {
            if out.len() == count {
                break;
            }
            let raw: Vec<f64> = (0..spec.initial_plan.dim())
                .map(|_| rng.random_range(-1.5..1.5))
                .collect();
            out.push(spec.with_plan(spec.initial_plan.with_raw(raw)));
        }
        round += 1;
    }
    out
}

/// Largest relative error between the analytic plan gradient and central
/// differences of the total cost, together with the count of parameters whose
/// perturbed rollouts terminated differently from the base rollout.
pub fn plan_gradient_error(
    sim: &Simulator,
    spec: &ScenarioSpec,
    ego: &dyn EgoAgent,
    full: bool,
    h: f64,
    floor: f64,
) -> (f64, usize) {
    let mode = if full { Mode::RecordFull } else { Mode::Record };
    let base = sim.rollout(spec, ego, mode).unwrap();
    let g = if full {
        sim.backward_full(&base, ego).unwrap()
    } else {
        sim.backward_direct(&base).unwrap()
    };
    let raw = spec.initial_plan.raw().to_vec();
    let mut worst: f64 = 0.0;
    let mut crossings = 0;
    for k in 0..raw.len() {
        let eval = |d: f64| {
            let mut r = raw.clone();
            r[k] += d;
            sim.rollout(&spec.with_plan(spec.initial_plan.with_raw(r)), ego, Mode::NoRecord)
                .unwrap()
        };
        let (p, m) = (eval(h), eval(-h));
        if p.verdict != base.verdict || m.verdict != base.verdict {
            crossings += 1;
        }
        let fd = (p.total_cost() - m.total_cost()) / (2.0 * h);
        worst = worst.max(rel_err(g.d_cost_d_raw[k], fd, floor));
    }
    (worst, crossings)
}
