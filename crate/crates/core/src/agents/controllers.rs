//! Lateral and longitudinal controllers that turn ego-frame waypoints into
//! throttle and steering commands.

use serde::{Deserialize, Serialize};

use crate::scenario::{Action, AgentState, Vec2};

use super::Waypoints;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerParams {
    /// Steering command per radian of heading error toward the aim point.
    pub k_lateral: f64,
    /// Throttle per m/s of speed deficit.
    pub k_speed: f64,
    /// Brake per m/s of speed excess beyond the deadband.
    pub k_brake: f64,
    pub deadband: f64,
    /// Time between consecutive waypoints, seconds.
    pub waypoint_interval: f64,
    /// Desired speeds below this are treated as a stop command.
    pub stop_speed: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            k_lateral: 1.5,
            k_speed: 0.5,
            k_brake: 0.5,
            deadband: 0.3,
            waypoint_interval: 0.5,
            stop_speed: 0.2,
        }
    }
}

/// Partial derivatives of the controller output.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControllerJacobian {
    /// `d_throttle[k]`, `d_steer[k]` with respect to waypoint `k`.
    pub d_throttle_d_wp: [Vec2; 4],
    pub d_steer_d_wp: [Vec2; 4],
    pub d_throttle_d_speed: f64,
}

pub fn desired_speed(wp: &Waypoints, p: &ControllerParams) -> f64 {
    (wp[2] - wp[0]).norm() / (2.0 * p.waypoint_interval)
}

pub fn controllers(wp: &Waypoints, state: &AgentState, p: &ControllerParams) -> Action {
    controllers_with_jacobian(wp, state, p).0
}

pub fn controllers_with_jacobian(
    wp: &Waypoints,
    state: &AgentState,
    p: &ControllerParams,
) -> (Action, ControllerJacobian) {
    let mut jac = ControllerJacobian::default();

    let aim = (wp[0] + wp[1]) * 0.5;
    let r2 = aim.norm_squared();
    let (steer, steer_gain) = if r2 > 1e-12 {
        let raw = p.k_lateral * aim.y.atan2(aim.x);
        if raw.abs() >= 1.0 {
            (raw.signum(), 0.0)
        } else {
            (raw, p.k_lateral)
        }
    } else {
        (0.0, 0.0)
    };
    if steer_gain != 0.0 {
        let d_err_d_aim = Vec2::new(-aim.y, aim.x) / r2;
        let g = d_err_d_aim * (steer_gain * 0.5);
        jac.d_steer_d_wp[0] = g;
        jac.d_steer_d_wp[1] = g;
    }

    let span = wp[2] - wp[0];
    let span_len = span.norm();
    let v_des = span_len / (2.0 * p.waypoint_interval);
    let err = v_des - state.speed;
    let (throttle, d_thr_d_err) = if v_des < p.stop_speed {
        (-1.0, 0.0)
    } else if err >= 0.0 {
        let raw = p.k_speed * err;
        if raw >= 1.0 {
            (1.0, 0.0)
        } else {
            (raw, p.k_speed)
        }
    } else if err >= -p.deadband {
        (0.0, 0.0)
    } else {
        let raw = p.k_brake * (err + p.deadband);
        if raw <= -1.0 {
            (-1.0, 0.0)
        } else {
            (raw, p.k_brake)
        }
    };
    if d_thr_d_err != 0.0 && span_len > 0.0 {
        let d_v_d_span = span / (span_len * 2.0 * p.waypoint_interval);
        jac.d_throttle_d_wp[2] = d_v_d_span * d_thr_d_err;
        jac.d_throttle_d_wp[0] = -d_v_d_span * d_thr_d_err;
    }
    jac.d_throttle_d_speed = -d_thr_d_err;

    (Action::new(throttle, steer), jac)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(spacing: f64) -> Waypoints {
        [1.0, 2.0, 3.0, 4.0].map(|k| Vec2::new(k * spacing, 0.0))
    }

    fn ego(v: f64) -> AgentState {
        AgentState::new(Vec2::zeros(), 0.0, v)
    }

    #[test]
    fn equilibrium_on_straight_waypoints() {
        let p = ControllerParams::default();
        // 6 m/s over 0.5 s intervals
        let a = controllers(&straight(3.0), &ego(6.0), &p);
        assert_eq!(a.steer, 0.0);
        assert!(a.throttle.abs() <= p.k_speed * p.deadband);
    }

    #[test]
    fn stop_command_is_full_brake() {
        let p = ControllerParams::default();
        let a = controllers(&[Vec2::zeros(); 4], &ego(5.0), &p);
        assert_eq!(a.throttle, -1.0);
        assert_eq!(a.steer, 0.0);
    }

    #[test]
    fn steering_proportional_until_clamp() {
        let p = ControllerParams::default();
        let at = |deg: f64| {
            let d = Vec2::new(deg.to_radians().cos(), deg.to_radians().sin());
            let wp = [d * 3.0, d * 6.0, d * 9.0, d * 12.0];
            controllers(&wp, &ego(6.0), &p).steer
        };
        let expected = p.k_lateral * 30f64.to_radians();
        assert!((at(30.0) - expected).abs() < 1e-12);
        assert!(at(30.0) > 0.0);
        assert!((at(10.0) - p.k_lateral * 10f64.to_radians()).abs() < 1e-12);
        assert_eq!(at(80.0), 1.0);
        assert_eq!(at(-80.0), -1.0);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = ControllerParams::default();
        let wp = [
            Vec2::new(2.0, 0.4),
            Vec2::new(4.1, 1.0),
            Vec2::new(5.5, 1.9),
            Vec2::new(7.0, 3.0),
        ];
        let s = ego(3.0);
        let (_, j) = controllers_with_jacobian(&wp, &s, &p);
        let h = 1e-6;
        for k in 0..4 {
            for c in 0..2 {
                let mut plus = wp;
                let mut minus = wp;
                plus[k][c] += h;
                minus[k][c] -= h;
                let ap = controllers(&plus, &s, &p);
                let am = controllers(&minus, &s, &p);
                let ft = (ap.throttle - am.throttle) / (2.0 * h);
                let fs = (ap.steer - am.steer) / (2.0 * h);
                assert!((ft - j.d_throttle_d_wp[k][c]).abs() < 1e-7);
                assert!((fs - j.d_steer_d_wp[k][c]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn output_always_bounded() {
        let p = ControllerParams::default();
        for k in 0..100 {
            let f = k as f64;
            let wp = [Vec2::new(f.sin() * 50.0, f.cos() * 40.0); 4];
            let a = controllers(&wp, &ego(f % 13.0), &p);
            assert!(a.throttle.abs() <= 1.0 && a.steer.abs() <= 1.0);
        }
    }
}
