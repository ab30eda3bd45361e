//! The adversarial objective: an attractive ego-collision potential, a
//! thresholded repulsion between adversaries and a Gaussian off-road
//! potential, each with gradients with respect to every agent state.

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_distance, BoxDistance, MapModel, PoseGrad};
use crate::scenario::TrafficState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    pub lambda: f64,
    pub gamma: f64,
    pub tau: f64,
    pub sigma: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            gamma: 1.0,
            tau: 2.0,
            sigma: 1.5,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.gamma >= 0.0) {
            return Err(Error::InvalidValue {
                field: "lambda/gamma",
                msg: "weights must be non-negative".into(),
            });
        }
        if !(self.tau > 0.0 && self.sigma > 0.0) {
            return Err(Error::InvalidValue {
                field: "tau/sigma",
                msg: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// `grad[t][agent]` holds the derivative with respect to `[x, y, heading, speed]`.
pub type GradBlocks = Vec<Vec<Vector4<f64>>>;

pub fn zero_grads(states: &[TrafficState]) -> GradBlocks {
    states.iter().map(|s| vec![Vector4::zeros(); s.agents.len()]).collect()
}

fn add_pose(block: &mut Vector4<f64>, g: &PoseGrad, scale: f64) {
    block[0] += scale * g.center.x;
    block[1] += scale * g.center.y;
    block[2] += scale * g.heading;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub value: f64,
    pub grad: GradBlocks,
}

fn pair_distance(s: &TrafficState, i: usize, j: usize) -> BoxDistance {
    box_distance(&s.agents[i].bbox(), &s.agents[j].bbox())
}

/// Minimum over adversaries of the horizon-averaged ego distance.
///
/// `horizon` fixes the `1 / (horizon + 1)` prefactor, so truncated sequences
/// are averaged against the full horizon.
pub fn phi_ego(states: &[TrafficState], horizon: usize) -> Result<Term> {
    let n_agents = states.first().map_or(0, |s| s.agents.len());
    if n_agents < 2 {
        return Err(Error::NoAdversaries);
    }
    let norm = 1.0 / (horizon as f64 + 1.0);
    let mut per_adv: Vec<Vec<BoxDistance>> = Vec::with_capacity(n_agents - 1);
    let mut best: Option<(usize, f64)> = None;
    for i in 1..n_agents {
        let ds: Vec<BoxDistance> = states.iter().map(|s| pair_distance(s, 0, i)).collect();
        let mean = ds.iter().map(|d| d.distance).sum::<f64>() * norm;
        if best.is_none_or(|(_, b)| mean < b) {
            best = Some((i, mean));
        }
        per_adv.push(ds);
    }
    let (arg, value) = best.expect("at least one adversary");
    let mut grad = zero_grads(states);
    for (t, d) in per_adv[arg - 1].iter().enumerate() {
        add_pose(&mut grad[t][0], &d.grad_a, norm);
        add_pose(&mut grad[t][arg], &d.grad_b, norm);
    }
    Ok(Term { value, grad })
}

/// Negated distance of the closest adversary pair over all timesteps,
/// saturated at `-tau`.
pub fn phi_adv_col(states: &[TrafficState], tau: f64) -> Term {
    let mut grad = zero_grads(states);
    let n_agents = states.first().map_or(0, |s| s.agents.len());
    let mut best: Option<(usize, usize, usize, BoxDistance)> = None;
    for i in 1..n_agents {
        for j in i + 1..n_agents {
            for (t, s) in states.iter().enumerate() {
                let d = pair_distance(s, i, j);
                if best.as_ref().is_none_or(|b| d.distance < b.3.distance) {
                    best = Some((i, j, t, d));
                }
            }
        }
    }
    match best {
        Some((i, j, t, d)) if d.distance < tau => {
            add_pose(&mut grad[t][i], &d.grad_a, -1.0);
            add_pose(&mut grad[t][j], &d.grad_b, -1.0);
            Term {
                value: -d.distance,
                grad,
            }
        }
        _ => Term { value: -tau, grad },
    }
}

/// Off-road potential summed over adversaries and timesteps, evaluated at
/// box centers.
pub fn phi_dev(states: &[TrafficState], map: &MapModel, sigma: f64) -> Term {
    let mut grad = zero_grads(states);
    let mut value = 0.0;
    for (t, s) in states.iter().enumerate() {
        for (i, a) in s.agents.iter().enumerate().skip(1) {
            let (g, dg) = map.offroad_field(a.position, sigma);
            value += g;
            grad[t][i][0] += dg.x;
            grad[t][i][1] += dg.y;
        }
    }
    Term { value, grad }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    pub ego_term: f64,
    pub adv_col_term: f64,
    pub dev_term: f64,
    pub total: f64,
    pub d_cost_d_state: GradBlocks,
}

pub fn total_cost(states: &[TrafficState], horizon: usize, map: &MapModel, w: &CostWeights) -> Result<CostBreakdown> {
    let ego = phi_ego(states, horizon)?;
    let adv = phi_adv_col(states, w.tau);
    let dev = phi_dev(states, map, w.sigma);
    let mut grad = ego.grad;
    for (t, row) in grad.iter_mut().enumerate() {
        for (i, g) in row.iter_mut().enumerate() {
            *g += adv.grad[t][i] * w.lambda + dev.grad[t][i] * w.gamma;
        }
    }
    Ok(CostBreakdown {
        ego_term: ego.value,
        adv_col_term: adv.value,
        dev_term: dev.value,
        total: ego.value + w.lambda * adv.value + w.gamma * dev.value,
        d_cost_d_state: grad,
    })
}
