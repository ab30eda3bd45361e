//! Fixed-length ego-centric featurization of the traffic state, with its
//! vector-Jacobian product back onto agent states.

use nalgebra::{Matrix2, Vector4};

use crate::scenario::{TrafficState, Vec2};

/// Number of adversaries encoded, nearest first.
pub const K_NEAREST: usize = 4;
pub const FEATURE_LEN: usize = 3 + K_NEAREST * 5;
const POS_SCALE: f64 = 20.0;
const SPEED_SCALE: f64 = 10.0;

pub type FeatureVector = [f64; FEATURE_LEN];

/// Which agent sits in each adversary slot, for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTape {
    pub slots: Vec<usize>,
    pub goal: Vec2,
    /// Sensitivity of the goal point to the ego position, for goals that
    /// are derived from it (zero for a fixed goal).
    pub d_goal_d_position: Matrix2<f64>,
}

fn to_ego(heading: f64, d: Vec2) -> Vec2 {
    let (s, c) = heading.sin_cos();
    Vec2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
}

/// Layout: `[speed, goal_x, goal_y]` then per slot
/// `[rel_x, rel_y, sin(dpsi), cos(dpsi), speed]`; empty slots are zero.
pub fn extract_features(state: &TrafficState, goal: Vec2) -> (FeatureVector, FeatureTape) {
    let ego = state.ego();
    let mut f = [0.0; FEATURE_LEN];
    f[0] = ego.speed / SPEED_SCALE;
    let g = to_ego(ego.heading, goal - ego.position) / POS_SCALE;
    f[1] = g.x;
    f[2] = g.y;

    let mut order: Vec<(f64, usize)> = state
        .agents
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, a)| ((a.position - ego.position).norm(), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let slots: Vec<usize> = order.iter().take(K_NEAREST).map(|&(_, i)| i).collect();

    for (k, &i) in slots.iter().enumerate() {
        let a = &state.agents[i];
        let rel = to_ego(ego.heading, a.position - ego.position) / POS_SCALE;
        let (s, c) = (a.heading - ego.heading).sin_cos();
        let base = 3 + 5 * k;
        f[base] = rel.x;
        f[base + 1] = rel.y;
        f[base + 2] = s;
        f[base + 3] = c;
        f[base + 4] = a.speed / SPEED_SCALE;
    }
    (
        f,
        FeatureTape {
            slots,
            goal,
            d_goal_d_position: Matrix2::zeros(),
        },
    )
}

/// Accumulate `d_features^T * dF/dstate` into per-agent state adjoints.
/// The slot assignment is held fixed.
pub fn features_vjp(
    state: &TrafficState,
    tape: &FeatureTape,
    d_features: &FeatureVector,
    adjoint: &mut [Vector4<f64>],
) {
    let ego = state.ego();
    let (s0, c0) = ego.heading.sin_cos();
    // d(to_ego(d)) / d d = R(-psi); its transpose maps back to world frame
    let back = |v: Vec2| Vec2::new(c0 * v.x - s0 * v.y, s0 * v.x + c0 * v.y);

    adjoint[0][3] += d_features[0] / SPEED_SCALE;

    let dg = Vec2::new(d_features[1], d_features[2]) / POS_SCALE;
    let r = to_ego(ego.heading, tape.goal - ego.position);
    let w = back(dg);
    let wg = w - tape.d_goal_d_position.transpose() * w;
    adjoint[0][0] -= wg.x;
    adjoint[0][1] -= wg.y;
    adjoint[0][2] += dg.x * r.y - dg.y * r.x;

    for (k, &i) in tape.slots.iter().enumerate() {
        let a = &state.agents[i];
        let base = 3 + 5 * k;
        let dr = Vec2::new(d_features[base], d_features[base + 1]) / POS_SCALE;
        let r = to_ego(ego.heading, a.position - ego.position);
        let w = back(dr);
        adjoint[i][0] += w.x;
        adjoint[i][1] += w.y;
        adjoint[0][0] -= w.x;
        adjoint[0][1] -= w.y;
        adjoint[0][2] += dr.x * r.y - dr.y * r.x;

        let (s, c) = (a.heading - ego.heading).sin_cos();
        let d_dpsi = d_features[base + 2] * c - d_features[base + 3] * s;
        adjoint[i][2] += d_dpsi;
        adjoint[0][2] -= d_dpsi;
        adjoint[i][3] += d_features[base + 4] / SPEED_SCALE;
    }
}
