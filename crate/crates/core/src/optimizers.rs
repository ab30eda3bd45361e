//! Adversarial plan search: gradient descent through the simulator and
//! black-box baselines, all scored by the same cost and success predicate.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::adam::Adam;
use crate::agents::EgoAgent;
use crate::error::{Error, Result};
use crate::scenario::{ActionPlan, ScenarioSpec, Verdict, VerdictKind};
use crate::sim::{Mode, RolloutResult, Simulator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    KingDirect,
    KingFull,
    RandomSearch,
    Simba,
    CmaEs,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::KingDirect,
        Method::KingFull,
        Method::RandomSearch,
        Method::Simba,
        Method::CmaEs,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::KingDirect => "king_direct",
            Method::KingFull => "king_full",
            Method::RandomSearch => "random_search",
            Method::Simba => "simba",
            Method::CmaEs => "cma_es",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub method: Method,
    /// Seconds of wall clock per attack.
    pub wall_clock_budget: f64,
    pub max_iterations: usize,
    /// Adam step size for the gradient methods.
    pub learning_rate: f64,
    /// Gaussian scale of random-search perturbations and the initial CMA-ES
    /// step size.
    pub perturbation_scale: f64,
    pub simba_epsilon: f64,
    /// CMA-ES population; `None` uses `4 + floor(3 ln dim)`.
    pub population_size: Option<usize>,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            method: Method::KingDirect,
            wall_clock_budget: 30.0,
            max_iterations: 1_000_000,
            learning_rate: 0.02,
            perturbation_scale: 0.3,
            simba_epsilon: 0.2,
            population_size: None,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn for_method(method: Method) -> Self {
        Self {
            method,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field, msg: &str| Err(Error::InvalidValue { field, msg: msg.into() });
        if !(self.wall_clock_budget >= 0.0) {
            return bad("wall_clock_budget", "must be non-negative");
        }
        match self.method {
            Method::KingDirect | Method::KingFull if !(self.learning_rate > 0.0) => {
                bad("learning_rate", "must be positive")
            }
            Method::RandomSearch | Method::CmaEs if !(self.perturbation_scale > 0.0) => {
                bad("perturbation_scale", "must be positive")
            }
            Method::Simba if !(self.simba_epsilon > 0.0) => bad("simba_epsilon", "must be positive"),
            Method::CmaEs if self.population_size.is_some_and(|p| p < 2) => {
                bad("population_size", "must be at least 2")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub method: Method,
    pub success: bool,
    pub best_plan: ActionPlan,
    pub best_cost: f64,
    /// Verdict of the best plan's rollout.
    pub verdict: Verdict,
    pub iterations: usize,
    pub wall_time: f64,
    pub time_to_success: Option<f64>,
    pub cost_trace: Vec<f64>,
    /// CMA-ES generations (full populations) evaluated.
    pub generations: Option<usize>,
}

impl AttackOutcome {
    pub fn seconds_per_iteration(&self) -> Option<f64> {
        (self.iterations > 0).then(|| self.wall_time / self.iterations as f64)
    }

    /// Result record without the plan, which is stored separately.
    pub fn to_json(&self, scenario_id: &str, plan_path: Option<&str>) -> Value {
        json!({
            "scenario": scenario_id,
            "method": self.method.as_str(),
            "success": self.success,
            "best_cost": self.best_cost,
            "verdict": self.verdict.kind.as_str(),
            "time_index": self.verdict.time_index,
            "agents_involved": self.verdict.agents_involved.map(|(a, b)| vec![a, b]),
            "iterations": self.iterations,
            "wall_time": self.wall_time,
            "time_to_success": self.time_to_success,
            "generations": self.generations,
            "cost_trace": self.cost_trace,
            "plan_path": plan_path,
        })
    }
}

pub fn is_success(v: &Verdict) -> bool {
    v.kind == VerdictKind::EgoCollision
}

/// Roll out `spec` with `plan` substituted.
pub fn replay(sim: &Simulator, spec: &ScenarioSpec, plan: &ActionPlan, ego: &dyn EgoAgent) -> Result<RolloutResult> {
    sim.rollout(&spec.with_plan(plan.clone()), ego, Mode::NoRecord)
}

struct Search<'a> {
    sim: &'a Simulator<'a>,
    spec: &'a ScenarioSpec,
    ego: &'a dyn EgoAgent,
    cfg: &'a AttackConfig,
    start: Instant,
    iterations: usize,
    trace: Vec<f64>,
    best: Option<(f64, Vec<f64>, Verdict)>,
    found: Option<(Vec<f64>, f64, Verdict, f64)>,
}

impl<'a> Search<'a> {
    fn exhausted(&self) -> bool {
        self.found.is_some()
            || self.iterations >= self.cfg.max_iterations
            || self.start.elapsed().as_secs_f64() >= self.cfg.wall_clock_budget
    }

    /// One iteration: a full rollout of `raw`. Returns the rollout so the
    /// gradient methods can reuse its tape.
    fn evaluate(&mut self, raw: &[f64], mode: Mode) -> Result<RolloutResult> {
        let plan = self.spec.initial_plan.with_raw(raw.to_vec());
        let r = self.sim.rollout(&self.spec.with_plan(plan), self.ego, mode)?;
        self.iterations += 1;
        let cost = r.total_cost();
        self.trace.push(cost);
        if self.best.as_ref().is_none_or(|b| cost < b.0) {
            self.best = Some((cost, raw.to_vec(), r.verdict));
        }
        if is_success(&r.verdict) && self.found.is_none() {
            self.found = Some((raw.to_vec(), cost, r.verdict, self.start.elapsed().as_secs_f64()));
        }
        Ok(r)
    }

    fn finish(self, generations: Option<usize>) -> Result<AttackOutcome> {
        let wall_time = self.start.elapsed().as_secs_f64();
        let initial = &self.spec.initial_plan;
        let (success, raw, cost, verdict, tts) = match (self.found, self.best) {
            (Some((raw, cost, verdict, t)), _) => (true, raw, cost, verdict, Some(t)),
            (None, Some((cost, raw, verdict))) => (false, raw, cost, verdict, None),
            (None, None) => (false, initial.raw().to_vec(), f64::NAN, Verdict::no_collision(), None),
        };
        let best_plan = initial.with_raw(raw);
        let mut success = success;
        if success {
            let check = replay(self.sim, self.spec, &best_plan, self.ego)?;
            success = check.verdict == verdict;
        }
        Ok(AttackOutcome {
            method: self.cfg.method,
            success,
            best_plan,
            best_cost: cost,
            verdict,
            iterations: self.iterations,
            wall_time,
            time_to_success: if success { tts } else { None },
            cost_trace: self.trace,
            generations,
        })
    }
}

/// Search for an adversary plan that makes the ego collide.
pub fn attack(sim: &Simulator, spec: &ScenarioSpec, ego: &dyn EgoAgent, cfg: &AttackConfig) -> Result<AttackOutcome> {
    cfg.validate()?;
    spec.validate()?;
    if spec.num_adversaries() == 0 {
        return Err(Error::NoAdversaries);
    }
    if cfg.method == Method::KingFull && ego.policy().is_none() {
        return Err(Error::MethodIncompatible {
            method: cfg.method.as_str().to_string(),
        });
    }
    let mut s = Search {
        sim,
        spec,
        ego,
        cfg,
        start: Instant::now(),
        iterations: 0,
        trace: Vec::new(),
        best: None,
        found: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ spec.seed.rotate_left(17));
    let mut generations = None;
    match cfg.method {
        Method::KingDirect | Method::KingFull => king(&mut s)?,
        Method::RandomSearch => random_search(&mut s, &mut rng)?,
        Method::Simba => simba(&mut s, &mut rng)?,
        Method::CmaEs => generations = Some(cma_es(&mut s, &mut rng)?),
    }
    s.finish(generations)
}

fn king(s: &mut Search) -> Result<()> {
    let mut raw = s.spec.initial_plan.raw().to_vec();
    let mut adam = Adam::new(raw.len(), s.cfg.learning_rate);
    while !s.exhausted() {
        let mode = if s.cfg.method == Method::KingFull {
            Mode::RecordFull
        } else {
            Mode::Record
        };
        let r = s.evaluate(&raw, mode)?;
        if s.found.is_some() {
            break;
        }
        let g = if s.cfg.method == Method::KingFull {
            s.sim.backward_full(&r, s.ego)?
        } else {
            s.sim.backward_direct(&r)?
        };
        adam.step(&mut raw, &g.d_cost_d_raw);
    }
    Ok(())
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_search(s: &mut Search, rng: &mut ChaCha8Rng) -> Result<()> {
    let base = s.spec.initial_plan.raw().to_vec();
    let sigma = s.cfg.perturbation_scale;
    if !s.exhausted() {
        s.evaluate(&base, Mode::NoRecord)?;
    }
    while !s.exhausted() {
        let cand: Vec<f64> = base.iter().map(|b| b + sigma * gaussian(rng)).collect();
        s.evaluate(&cand, Mode::NoRecord)?;
    }
    Ok(())
}

fn simba(s: &mut Search, rng: &mut ChaCha8Rng) -> Result<()> {
    let eps = s.cfg.simba_epsilon;
    let mut cur = s.spec.initial_plan.raw().to_vec();
    if s.exhausted() {
        return Ok(());
    }
    let mut cur_cost = s.evaluate(&cur, Mode::NoRecord)?.total_cost();
    let mut order: Vec<usize> = Vec::new();
    while !s.exhausted() {
        if order.is_empty() {
            order = (0..cur.len()).collect();
            order.shuffle(rng);
        }
        let k = order.pop().expect("refilled");
        for sign in [1.0, -1.0] {
            if s.exhausted() {
                break;
            }
            let mut cand = cur.clone();
            cand[k] += sign * eps;
            let c = s.evaluate(&cand, Mode::NoRecord)?.total_cost();
            if c < cur_cost {
                cur = cand;
                cur_cost = c;
                break;
            }
        }
    }
    Ok(())
}

/// (mu/mu_w, lambda)-CMA-ES with lazily refreshed eigendecomposition.
fn cma_es(s: &mut Search, rng: &mut ChaCha8Rng) -> Result<usize> {
    let n = s.spec.initial_plan.dim();
    let nf = n as f64;
    let lambda = s
        .cfg
        .population_size
        .unwrap_or(4 + (3.0 * nf.ln()).floor() as usize)
        .max(2);
    let mu = lambda / 2;
    let w_raw: Vec<f64> = (0..mu)
        .map(|i| (mu as f64 + 0.5).ln() - ((i + 1) as f64).ln())
        .collect();
    let w_sum: f64 = w_raw.iter().sum();
    let weights: Vec<f64> = w_raw.iter().map(|w| w / w_sum).collect();
    let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

    let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
    let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
    let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
    let c1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
    let c_mu = (1.0 - c1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let mut mean = DVector::from_column_slice(s.spec.initial_plan.raw());
    let mut sigma = s.cfg.perturbation_scale;
    let mut cov = DMatrix::<f64>::identity(n, n);
    let mut basis = DMatrix::<f64>::identity(n, n);
    let mut scales = DVector::<f64>::from_element(n, 1.0);
    let mut p_sigma = DVector::<f64>::zeros(n);
    let mut p_c = DVector::<f64>::zeros(n);
    let mut eigen_gen = 0usize;
    let mut generation = 0usize;

    'outer: while !s.exhausted() {
        let mut pop: Vec<(f64, DVector<f64>)> = Vec::with_capacity(lambda);
        for _ in 0..lambda {
            if s.exhausted() {
                break 'outer;
            }
            let z = DVector::<f64>::from_fn(n, |_, _| gaussian(rng));
            let y = &basis * scales.component_mul(&z);
            let x = &mean + &y * sigma;
            let cost = s.evaluate(x.as_slice(), Mode::NoRecord)?.total_cost();
            pop.push((cost, y));
        }
        generation += 1;
        pop.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut y_w = DVector::<f64>::zeros(n);
        for (w, (_, y)) in weights.iter().zip(&pop) {
            y_w.axpy(*w, y, 1.0);
        }
        mean.axpy(sigma, &y_w, 1.0);

        // C^{-1/2} y_w = B D^{-1} B^T y_w
        let bt_y = basis.tr_mul(&y_w);
        let c_inv_sqrt_y = &basis * bt_y.component_div(&scales);
        p_sigma = p_sigma * (1.0 - c_sigma) + c_inv_sqrt_y * (c_sigma * (2.0 - c_sigma) * mu_eff).sqrt();
        let ps_norm = p_sigma.norm();
        let h_sigma =
            ps_norm / (1.0 - (1.0 - c_sigma).powi(2 * generation as i32)).sqrt() < (1.4 + 2.0 / (nf + 1.0)) * chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };
        p_c = p_c * (1.0 - c_c) + &y_w * (h * (c_c * (2.0 - c_c) * mu_eff).sqrt());

        let old_scale = 1.0 - c1 - c_mu + (1.0 - h) * c1 * c_c * (2.0 - c_c);
        cov *= old_scale;
        cov.ger(c1, &p_c, &p_c, 1.0);
        for (w, (_, y)) in weights.iter().zip(&pop) {
            cov.ger(c_mu * w, y, y, 1.0);
        }
        sigma *= ((c_sigma / d_sigma) * (ps_norm / chi_n - 1.0)).exp();

        if (generation - eigen_gen) as f64 > lambda as f64 / (c1 + c_mu) / nf / 10.0 {
            eigen_gen = generation;
            // keep exact symmetry before decomposing
            let sym = (&cov + cov.transpose()) * 0.5;
            cov = sym;
            let eig = SymmetricEigen::new(cov.clone());
            basis = eig.eigenvectors;
            scales = eig.eigenvalues.map(|v| v.max(1e-20).sqrt());
        }
    }
    Ok(generation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::StubEgo;
    use crate::costs::CostWeights;
    use crate::geometry::{MapModel, Polygon};
    use crate::kinematics::BicycleParams;
    use crate::scenario::{AgentState, TrafficState, Vec2};

    fn road() -> MapModel {
        MapModel::new(
            "road",
            vec![Polygon::new(vec![
                Vec2::new(-20.0, -12.0),
                Vec2::new(200.0, -12.0),
                Vec2::new(200.0, 12.0),
                Vec2::new(-20.0, 12.0),
            ])],
            vec![],
            0.2,
        )
        .unwrap()
    }

    fn lateral_spec() -> ScenarioSpec {
        ScenarioSpec {
            map_id: "road".into(),
            horizon: 40,
            dt: 0.25,
            ego_route: vec![Vec2::new(0.0, 0.0), Vec2::new(180.0, 0.0)],
            ego_goal: Vec2::new(180.0, 0.0),
            initial_state: TrafficState {
                agents: vec![
                    AgentState::new(Vec2::new(0.0, 0.0), 0.0, 5.0),
                    AgentState::new(Vec2::new(0.0, 3.0 + 2.0), 0.0, 5.0),
                ],
            },
            initial_plan: ActionPlan::zeros(1, 40),
            seed: 3,
        }
    }

    #[test]
    fn king_finds_easy_collision() {
        let map = road();
        let sim = Simulator::new(&map, BicycleParams::default(), CostWeights::default());
        let spec = lateral_spec();
        let ego = StubEgo::coasting();
        let cfg = AttackConfig {
            max_iterations: 100,
            wall_clock_budget: 60.0,
            ..Default::default()
        };
        let out = attack(&sim, &spec, &ego, &cfg).unwrap();
        assert!(out.success, "{:?}", out.cost_trace);
        assert!(out.iterations <= 100);
        let r = replay(&sim, &spec, &out.best_plan, &ego).unwrap();
        assert_eq!(r.verdict.kind, VerdictKind::EgoCollision);
    }

    #[test]
    fn zero_budget_does_nothing() {
        let map = road();
        let sim = Simulator::new(&map, BicycleParams::default(), CostWeights::default());
        let spec = lateral_spec();
        for method in [Method::KingDirect, Method::RandomSearch, Method::Simba, Method::CmaEs] {
            let cfg = AttackConfig {
                method,
                wall_clock_budget: 0.0,
                ..Default::default()
            };
            let out = attack(&sim, &spec, &StubEgo::coasting(), &cfg).unwrap();
            assert!(!out.success);
            assert_eq!(out.iterations, 0);
            assert_eq!(out.best_plan, spec.initial_plan);
        }
    }

    #[test]
    fn full_requires_policy() {
        let map = road();
        let sim = Simulator::new(&map, BicycleParams::default(), CostWeights::default());
        let cfg = AttackConfig::for_method(Method::KingFull);
        assert!(matches!(
            attack(&sim, &lateral_spec(), &StubEgo::coasting(), &cfg),
            Err(Error::MethodIncompatible { .. })
        ));
    }

    #[test]
    fn baselines_keep_best_and_are_deterministic() {
        let map = road();
        let sim = Simulator::new(&map, BicycleParams::default(), CostWeights::default());
        let mut spec = lateral_spec();
        spec.initial_state.agents[1].position.y = 9.0;
        for method in [Method::RandomSearch, Method::Simba, Method::CmaEs, Method::KingDirect] {
            let cfg = AttackConfig {
                method,
                max_iterations: 60,
                wall_clock_budget: 60.0,
                ..Default::default()
            };
            let a = attack(&sim, &spec, &StubEgo::coasting(), &cfg).unwrap();
            let b = attack(&sim, &spec, &StubEgo::coasting(), &cfg).unwrap();
            assert_eq!(a.cost_trace, b.cost_trace, "{method:?}");
            let min = a.cost_trace.iter().copied().fold(f64::INFINITY, f64::min);
            if !a.success {
                assert_eq!(a.best_cost, min);
            }
        }
    }
}
