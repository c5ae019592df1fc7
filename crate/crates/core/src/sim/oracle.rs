//! Scripted privileged teacher. The oracle reads the full world state
//! (including agents the policy cannot see) and is stateless: every decision
//! is a function of the current world only, so forward-simulating a cloned
//! world reproduces its own future exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::world::*;
use super::{ScenarioKind, WAYPOINTS};
use crate::controller::ControlCommand;
use crate::error::{check_len, Result};

pub const PRIVILEGED_DIM: usize = 22;
pub const TEACHER_FEATURE_DIM: usize = 64;

/// Free-road target speed.
pub const CRUISE_SPEED: f64 = 8.0;
const GIVE_WAY_SPEED: f64 = 7.0;
/// Overtaking: start the lane change once the obstacle is this close.
const OVERTAKE_TRIGGER: f64 = 25.0;
/// Overtaking: return once the ego rear is this far past the obstacle front.
const OVERTAKE_CLEARANCE: f64 = 5.0;
/// Traffic sign: target stopping point of the front bumper before the line.
const STOP_MARGIN: f64 = 1.0;
const STOP_DECEL: f64 = 2.5;
const MERGE_MARGIN: f64 = 3.0;
/// Shortest pure-pursuit look-ahead distance.
const PURSUIT_MIN_LOOKAHEAD: f64 = 10.0;

const ORACLE_IDM: IdmParams = IdmParams {
    max_accel: 2.0,
    comfort_decel: 3.0,
    time_headway: 1.2,
    min_gap: 3.0,
};

/// Teacher targets for one recorded step. `reward` and `value` are filled by
/// the rollout once the future of the episode is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleStep {
    pub waypoints: [[f64; 2]; WAYPOINTS],
    pub value: f64,
    pub teacher_feature: Vec<f64>,
    pub controls: ControlCommand,
    pub reward: f64,
}

/// Frozen random linear map from privileged state to teacher feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Projection {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7EAC_4E55_F00D_0001);
        let bound = (3.0 / PRIVILEGED_DIM as f64).sqrt();
        let data = (0..TEACHER_FEATURE_DIM * PRIVILEGED_DIM)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self {
            rows: TEACHER_FEATURE_DIM,
            cols: PRIVILEGED_DIM,
            data,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_len("projection rows", TEACHER_FEATURE_DIM, self.rows)?;
        check_len("projection cols", PRIVILEGED_DIM, self.cols)?;
        check_len("projection data", self.rows * self.cols, self.data.len())
    }

    pub fn apply(&self, state: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                self.data[r * self.cols..(r + 1) * self.cols]
                    .iter()
                    .zip(state)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

/// Nearest agent ahead in the band of lateral position `y`: `(bumper gap, speed)`.
fn leader_at(world: &WorldState, y: f64) -> Option<(f64, f64)> {
    let ego = &world.ego;
    world
        .agents
        .iter()
        .filter(|a| a.x > ego.pose.x && (a.y - y).abs() < 0.5 * (a.width + VEHICLE_WIDTH) + 0.2)
        .map(|a| (a.rear() - ego.front(), a.speed))
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

fn nearest_in_lane(world: &WorldState, lane: usize, ahead: bool) -> Option<&Agent> {
    let ego = &world.ego;
    let y = lane_center(lane);
    world
        .agents
        .iter()
        .filter(|a| (a.y - y).abs() < 1.0 && (a.x > ego.pose.x) == ahead)
        .min_by(|a, b| (a.x - ego.pose.x).abs().total_cmp(&(b.x - ego.pose.x).abs()))
}

/// Privileged state vector; the trailing kind one-hot makes scenario
/// families linearly separable.
pub fn privileged_state(world: &WorldState) -> Vec<f64> {
    let ego = &world.ego;
    let mut s = Vec::with_capacity(PRIVILEGED_DIM);
    s.push(ego.speed / 10.0);
    s.push(ego.pose.y / LANE_WIDTH);
    s.push(ego.pose.heading);
    s.push((world.goal[0] - ego.pose.x) / 50.0);
    s.push((world.goal[1] - ego.pose.y) / LANE_WIDTH);
    for lane in 0..2 {
        match nearest_in_lane(world, lane, true) {
            Some(a) => {
                s.push(((a.rear() - ego.front()) / 50.0).min(1.0));
                s.push(a.speed / 10.0);
            }
            None => {
                s.push(1.0);
                s.push(0.0);
            }
        }
    }
    let rear = world
        .agents
        .iter()
        .filter(|a| a.x <= ego.pose.x)
        .max_by(|a, b| a.x.total_cmp(&b.x));
    match rear {
        Some(a) => {
            s.push(((ego.rear() - a.front()) / 50.0).clamp(-1.0, 1.0));
            s.push(a.speed / 10.0);
        }
        None => {
            s.push(1.0);
            s.push(0.0);
        }
    }
    s.push(world.road.right_lane_end.map_or(1.0, |e| ((e - ego.front()) / 100.0).min(1.0)));
    s.push(world.road.stop_line.map_or(1.0, |l| ((l - ego.front()) / 50.0).min(1.0)));
    s.push(if world.stop.is_some_and(|st| st.cleared) { 1.0 } else { 0.0 });
    s.push(if world.road.left_lane { 1.0 } else { 0.0 });
    s.push(if world.yield_target_passed() { 1.0 } else { 0.0 });
    for k in ScenarioKind::ALL {
        s.push(if k == world.kind { 1.0 } else { 0.0 });
    }
    s.push(1.0);
    debug_assert_eq!(s.len(), PRIVILEGED_DIM);
    s
}

/// Maps a desired acceleration onto throttle/brake, compensating drag.
fn accel_to_pedals(a: f64, v: f64) -> (f64, f64) {
    let need = a + DRAG * v;
    if need >= 0.0 {
        ((need / A_MAX).min(1.0), 0.0)
    } else {
        (0.0, (-need / B_MAX).min(1.0))
    }
}

/// Pure-pursuit steering toward the centre line `y_target`.
fn pursue_lane(world: &WorldState, y_target: f64) -> f64 {
    let ego = &world.ego;
    let lookahead = (1.5 * ego.speed).max(PURSUIT_MIN_LOOKAHEAD);
    let [lx, ly] = ego.pose.to_local(ego.pose.x + lookahead, y_target);
    let curvature = 2.0 * ly / (lx * lx + ly * ly);
    ((WHEELBASE * curvature).atan() / MAX_STEER).clamp(-1.0, 1.0)
}

fn track_speed(v: f64, target: f64) -> f64 {
    (2.0 * (target - v)).clamp(-B_MAX, A_MAX)
}

/// Desired acceleration capped by IDM against whatever occupies the ego's path.
fn follow(world: &WorldState, v0: f64) -> f64 {
    let v = world.ego.speed;
    let mut a = track_speed(v, v0);
    if let Some(lead) = leader_at(world, world.ego.pose.y) {
        a = a.min(idm_accel(v, v0, Some(lead), &ORACLE_IDM));
    }
    a
}

/// Oracle control for the current world state.
pub fn oracle_controls(world: &WorldState) -> ControlCommand {
    let ego = &world.ego;
    let v = ego.speed;
    let (accel, lane) = match world.kind {
        ScenarioKind::EmergencyBrake => (follow(world, CRUISE_SPEED), 0),
        ScenarioKind::Overtaking => {
            let lane = match nearest_obstacle(world) {
                Some(o) => {
                    let passed = ego.rear() > o.front() + OVERTAKE_CLEARANCE;
                    usize::from(!passed && o.rear() - ego.front() < OVERTAKE_TRIGGER)
                }
                None => 0,
            };
            (follow(world, CRUISE_SPEED), lane)
        }
        ScenarioKind::GiveWay => {
            let lane = usize::from(world.yield_target_passed());
            (follow(world, GIVE_WAY_SPEED), lane)
        }
        ScenarioKind::TrafficSign => (stop_and_go(world), 0),
        ScenarioKind::Merging => merge(world),
    };
    let steer = pursue_lane(world, lane_center(lane));
    // Hold firmly at a stop rather than letting drag do the work.
    let (throttle, brake) = if accel <= 0.0 && v < STOP_SPEED {
        (0.0, 0.5)
    } else {
        accel_to_pedals(accel.clamp(-B_MAX, A_MAX), v)
    };
    ControlCommand::new(throttle, brake, steer)
}

fn nearest_obstacle(world: &WorldState) -> Option<&Agent> {
    world.agents.iter().find(|a| a.y.abs() < 1.0)
}

fn stop_and_go(world: &WorldState) -> f64 {
    let ego = &world.ego;
    let v = ego.speed;
    match (world.road.stop_line, world.stop) {
        (Some(line), Some(st)) if !st.cleared => {
            let d = line - STOP_MARGIN - ego.front();
            if d <= 0.5 {
                -B_MAX
            } else {
                let allowed = (2.0 * STOP_DECEL * d).sqrt();
                track_speed(v, CRUISE_SPEED.min(allowed))
            }
        }
        _ => track_speed(v, CRUISE_SPEED),
    }
}

fn merge(world: &WorldState) -> (f64, usize) {
    let ego = &world.ego;
    let v = ego.speed;
    let gap = world
        .merge_gap
        .and_then(|(l, f)| Some((world.agent(l)?, world.agent(f)?)));
    let Some((leader, follower)) = gap else {
        return (follow(world, CRUISE_SPEED), 1);
    };
    if ego.pose.y > lane_center(1) - 1.0 {
        return (follow(world, CRUISE_SPEED), 1);
    }
    let lo = follower.front();
    let hi = leader.rear();
    let centre = 0.5 * (lo + hi);
    let target_speed = (leader.speed + 0.6 * (centre - ego.pose.x)).clamp(0.0, 11.0);
    let mut a = (1.5 * (target_speed - v)).clamp(-4.0, 2.5);
    if let Some(end) = world.road.right_lane_end {
        let room = (end - ego.front() - 2.0).max(0.0);
        a = a.min(track_speed(v, (2.0 * 3.0 * room).sqrt()));
    }
    let inside = ego.front() < hi - MERGE_MARGIN && ego.rear() > lo + MERGE_MARGIN;
    let committed = ego.pose.y > 1.0;
    (a, usize::from(inside || committed))
}

/// Oracle targets at the current state: waypoints from forward-simulating a
/// clone of the world under the oracle for 2 s, transformed to the current
/// ego frame. An uncleared stop line stays uncleared in the clone. `value`
/// and `reward` are left at zero.
pub fn oracle_policy(world: &WorldState, projection: &Projection) -> OracleStep {
    let controls = oracle_controls(world);
    let mut sim = world.clone();
    sim.goal[0] = f64::INFINITY;
    sim.time_limit = f64::INFINITY;
    sim.termination = Termination::Running;
    let mut waypoints = [[0.0; 2]; WAYPOINTS];
    for wp in waypoints.iter_mut() {
        for _ in 0..STEPS_PER_RECORD {
            let c = oracle_controls(&sim);
            // Oracle controls are always clamped, so stepping cannot fail.
            sim.step(c, DT).expect("oracle control is valid");
            // The plan never anticipates a stop line clearing: it keeps the
            // ego waiting until the real world releases it.
            if world.stop.is_some_and(|s| !s.cleared) {
                sim.stop = world.stop;
            }
        }
        *wp = world.ego.pose.to_local(sim.ego.pose.x, sim.ego.pose.y);
    }
    OracleStep {
        waypoints,
        value: 0.0,
        teacher_feature: projection.apply(&privileged_state(world)),
        controls,
        reward: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::spawn_scenario;

    #[test]
    fn holds_brake_at_the_stop_line() {
        let mut w = spawn_scenario(ScenarioKind::TrafficSign, 0);
        let line = w.road.stop_line.unwrap();
        w.ego.pose.x = line - 0.5 * VEHICLE_LENGTH;
        w.ego.speed = 0.0;
        let c = oracle_controls(&w);
        assert_eq!(c.throttle, 0.0);
        assert!(c.brake > 0.0);
        assert_eq!(c.steer, 0.0);
    }

    #[test]
    fn accelerates_on_a_free_road() {
        let mut w = spawn_scenario(ScenarioKind::TrafficSign, 0);
        w.ego.speed = 3.0;
        let c = oracle_controls(&w);
        assert!(c.throttle > 0.0);
        assert_eq!(c.brake, 0.0);
    }

    #[test]
    fn privileged_state_shape_and_kind_bits() {
        for kind in ScenarioKind::ALL {
            let s = privileged_state(&spawn_scenario(kind, 1));
            assert_eq!(s.len(), PRIVILEGED_DIM);
            assert_eq!(s[16 + kind.id()], 1.0);
            assert!(s.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn waypoints_move_forward_on_a_free_road() {
        let w = spawn_scenario(ScenarioKind::TrafficSign, 2);
        let p = Projection::from_seed(0);
        let step = oracle_policy(&w, &p);
        for k in 1..WAYPOINTS {
            assert!(step.waypoints[k][0] > step.waypoints[k - 1][0]);
        }
        assert_eq!(step.teacher_feature.len(), TEACHER_FEATURE_DIM);
        assert_eq!(oracle_policy(&w, &p), step);
    }
}
