//! PID tracking of a planned waypoint sequence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longitudinal gains (K_P, K_I, K_D).
pub const LONGITUDINAL_GAINS: (f64, f64, f64) = (5.0, 0.5, 1.0);
/// Lateral gains (K_P, K_I, K_D).
pub const LATERAL_GAINS: (f64, f64, f64) = (0.75, 0.75, 0.3);
pub const LONGITUDINAL_INTEGRAL_CLAMP: f64 = 10.0;
pub const LATERAL_INTEGRAL_CLAMP: f64 = 2.0;
pub const BRAKE_DEADBAND: f64 = 0.1;
/// Plans slower than this are treated as "stop here": full brake, no throttle.
pub const STANDSTILL_SPEED: f64 = 0.4;
/// Aim points closer than this carry no usable heading; steering holds straight.
pub const MIN_AIM_DISTANCE: f64 = 1.0;
/// Waypoints are spaced 0.5 s apart.
pub const WAYPOINT_RATE_HZ: f64 = 2.0;

/// Actuator command. Steer is signed, positive to the left.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlCommand {
    pub throttle: f64,
    pub brake: f64,
    pub steer: f64,
}

impl ControlCommand {
    pub fn new(throttle: f64, brake: f64, steer: f64) -> Self {
        Self {
            throttle: throttle.clamp(0.0, 1.0),
            brake: brake.clamp(0.0, 1.0),
            steer: steer.clamp(-1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.throttle.is_finite() && self.brake.is_finite() && self.steer.is_finite()) {
            return Err(Error::NonFinite("control command"));
        }
        if !(0.0..=1.0).contains(&self.throttle) || !(0.0..=1.0).contains(&self.brake) || !(-1.0..=1.0).contains(&self.steer)
        {
            return Err(Error::InvalidArgument(format!("control out of range: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PidState {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub integral_clamp: f64,
    integral: f64,
    prev_error: Option<f64>,
}

impl PidState {
    pub fn new((kp, ki, kd): (f64, f64, f64), integral_clamp: f64) -> Self {
        Self {
            kp,
            ki,
            kd,
            integral_clamp,
            integral: 0.0,
            prev_error: None,
        }
    }

    pub fn longitudinal() -> Self {
        Self::new(LONGITUDINAL_GAINS, LONGITUDINAL_INTEGRAL_CLAMP)
    }

    pub fn lateral() -> Self {
        Self::new(LATERAL_GAINS, LATERAL_INTEGRAL_CLAMP)
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    /// `K_P·e + K_I·∫e + K_D·ė`; the derivative is zero on the first call
    /// after construction or reset.
    pub fn step(&mut self, error: f64, dt: f64) -> f64 {
        debug_assert!(dt > 0.0);
        self.integral = (self.integral + error * dt).clamp(-self.integral_clamp, self.integral_clamp);
        let prev = self.prev_error.unwrap_or(error);
        self.prev_error = Some(error);
        self.kp * error + self.ki * self.integral + self.kd * (error - prev) / dt
    }
}

/// Desired speed: mean spacing along origin → w1 → … → w4, times 2 Hz.
pub fn desired_speed(waypoints: &[[f64; 2]]) -> f64 {
    if waypoints.is_empty() {
        return 0.0;
    }
    let mut prev = [0.0, 0.0];
    let mut total = 0.0;
    for w in waypoints {
        total += ((w[0] - prev[0]).powi(2) + (w[1] - prev[1]).powi(2)).sqrt();
        prev = *w;
    }
    total / waypoints.len() as f64 * WAYPOINT_RATE_HZ
}

/// Throttle/brake from the speed error. A plan slower than
/// [`STANDSTILL_SPEED`] brakes fully; the PID state still advances.
pub fn longitudinal(waypoints: &[[f64; 2]], speed: f64, pid: &mut PidState, dt: f64) -> (f64, f64) {
    let desired = desired_speed(waypoints);
    let u = pid.step(desired - speed, dt);
    if desired < STANDSTILL_SPEED {
        (0.0, 1.0)
    } else if u > 0.0 {
        (u.clamp(0.0, 1.0), 0.0)
    } else if u < -BRAKE_DEADBAND {
        (0.0, (-u).clamp(0.0, 1.0))
    } else {
        (0.0, 0.0)
    }
}

/// Steer toward the mean of the first two waypoints.
pub fn lateral(waypoints: &[[f64; 2]], pid: &mut PidState, dt: f64) -> f64 {
    if waypoints.len() < 2 {
        return 0.0;
    }
    let aim = [
        0.5 * (waypoints[0][0] + waypoints[1][0]),
        0.5 * (waypoints[0][1] + waypoints[1][1]),
    ];
    // Degenerate or near-standstill aim point: hold the wheel straight
    // without touching the PID state.
    if aim[0].hypot(aim[1]) < MIN_AIM_DISTANCE {
        return 0.0;
    }
    let error = aim[1].atan2(aim[0]);
    pid.step(error, dt).clamp(-1.0, 1.0)
}

/// Per-episode controller pair.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointFollower {
    pub longitudinal: PidState,
    pub lateral: PidState,
}

impl Default for WaypointFollower {
    fn default() -> Self {
        Self {
            longitudinal: PidState::longitudinal(),
            lateral: PidState::lateral(),
        }
    }
}

impl WaypointFollower {
    pub fn reset(&mut self) {
        self.longitudinal.reset();
        self.lateral.reset();
    }

    pub fn control(&mut self, waypoints: &[[f64; 2]], speed: f64, dt: f64) -> ControlCommand {
        let (throttle, brake) = longitudinal(waypoints, speed, &mut self.longitudinal, dt);
        let steer = lateral(waypoints, &mut self.lateral, dt);
        ControlCommand::new(throttle, brake, steer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn zero_error_gives_zero_output() {
        let mut pid = PidState::longitudinal();
        for _ in 0..10 {
            assert_eq!(pid.step(0.0, 0.05), 0.0);
        }
    }

    #[test]
    fn first_call_has_no_derivative_kick() {
        let mut pid = PidState::longitudinal();
        let u = pid.step(1.0, 0.05);
        assert!((u - 5.025).abs() < 1e-12);
    }

    #[test]
    fn integral_grows_linearly_until_clamp() {
        let mut pid = PidState::new((0.0, 1.0, 0.0), 0.3);
        let mut outs = vec![];
        for _ in 0..10 {
            outs.push(pid.step(1.0, 0.05));
        }
        for (i, u) in outs.iter().enumerate().take(6) {
            assert!((u - 0.05 * (i + 1) as f64).abs() < 1e-12);
        }
        assert!((outs[9] - 0.3).abs() < 1e-12);
        pid.reset();
        assert_eq!(pid.integral(), 0.0);
    }

    #[test]
    fn stationary_plan_brakes_a_moving_ego() {
        let mut pid = PidState::longitudinal();
        let (t, b) = longitudinal(&[[0.0, 0.0]; 4], 5.0, &mut pid, 0.05);
        assert_eq!(t, 0.0);
        assert!(b > 0.0);
    }

    #[test]
    fn near_stationary_plan_holds_full_brake() {
        let wps = [[0.05, 0.0], [0.1, 0.0], [0.15, 0.0], [0.2, 0.0]];
        let mut pid = PidState::longitudinal();
        assert_eq!(longitudinal(&wps, 0.0, &mut pid, 0.05), (0.0, 1.0));
    }

    #[test]
    fn matched_speed_sits_in_deadband() {
        let wps = [[2.5, 0.0], [5.0, 0.0], [7.5, 0.0], [10.0, 0.0]];
        assert!((desired_speed(&wps) - 5.0).abs() < 1e-12);
        let mut pid = PidState::longitudinal();
        assert_eq!(longitudinal(&wps, 5.0, &mut pid, 0.05), (0.0, 0.0));
    }

    #[test]
    fn large_speed_error_saturates_throttle() {
        let wps = [[2.5, 0.0], [5.0, 0.0], [7.5, 0.0], [10.0, 0.0]];
        let mut pid = PidState::longitudinal();
        assert_eq!(longitudinal(&wps, 0.0, &mut pid, 0.05), (1.0, 0.0));
    }

    #[test]
    fn straight_plan_has_zero_steer() {
        let wps = [[2.0, 0.0], [4.0, 0.0], [6.0, 0.0], [8.0, 0.0]];
        assert_eq!(lateral(&wps, &mut PidState::lateral(), 0.05), 0.0);
    }

    #[test]
    fn close_aim_point_behind_does_not_steer() {
        let mut pid = PidState::lateral();
        let wps = [[-0.3, 0.01], [0.2, 0.0], [0.9, 0.0], [1.7, 0.0]];
        assert_eq!(lateral(&wps, &mut pid, 0.05), 0.0);
        assert_eq!(pid, PidState::lateral());
    }

    #[test]
    fn aim_point_at_45_degrees() {
        let wps = [[1.0, 1.0], [3.0, 3.0], [5.0, 5.0], [7.0, 7.0]];
        let s = lateral(&wps, &mut PidState::lateral(), 0.05);
        let expected = 0.75 * FRAC_PI_4 + 0.75 * FRAC_PI_4 * 0.05;
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 0.6185).abs() < 1e-4);
    }

    #[test]
    fn degenerate_aim_point_is_straight() {
        let wps = [[1.0, 0.5], [-1.0, -0.5], [0.0, 0.0], [0.0, 0.0]];
        assert_eq!(lateral(&wps, &mut PidState::lateral(), 0.05), 0.0);
    }

    proptest::proptest! {
        #[test]
        fn mirrored_plan_negates_steer(
            pts in proptest::collection::vec((0.1f64..30.0, -20.0f64..20.0), 4),
            steps in 1usize..5,
        ) {
            let wps: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [x, y]).collect();
            let mirrored: Vec<[f64; 2]> = wps.iter().map(|w| [w[0], -w[1]]).collect();
            let (mut a, mut b) = (PidState::lateral(), PidState::lateral());
            for _ in 0..steps {
                let sa = lateral(&wps, &mut a, 0.05);
                let sb = lateral(&mirrored, &mut b, 0.05);
                proptest::prop_assert_eq!(sa, -sb);
            }
        }

        #[test]
        fn outputs_always_in_range(
            pts in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 4),
            speed in 0.0f64..50.0,
        ) {
            let wps: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [x, y]).collect();
            let mut f = WaypointFollower::default();
            for _ in 0..5 {
                let c = f.control(&wps, speed, 0.05);
                proptest::prop_assert!(c.validate().is_ok());
            }
        }
    }
}
