use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::world::*;
use super::ScenarioKind;

pub const DEFAULT_TIME_LIMIT: f64 = 40.0;

/// Randomisation ranges for every scenario family. Ranges are `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub ego_speed: (f64, f64),
    /// Bumper-to-bumper length of the single mergeable gap.
    pub merge_gap: (f64, f64),
    pub merge_lane_end: (f64, f64),
    pub merge_stream_speed: (f64, f64),
    /// Initial longitudinal offset of the gap centre from the ego.
    pub merge_gap_offset: (f64, f64),
    /// Bumper gap between the other vehicles of the stream (too short to merge into).
    pub merge_stream_spacing: f64,
    pub overtake_obstacle_x: (f64, f64),
    pub overtake_obstacle_speed: (f64, f64),
    pub brake_initial_gap: (f64, f64),
    /// Distance the lead travels before it brakes.
    pub brake_trigger_distance: (f64, f64),
    pub brake_decel: (f64, f64),
    pub brake_hold: f64,
    /// How far behind the ego's rear bumper the Give Way vehicle starts (front bumper).
    pub give_way_rear_gap: (f64, f64),
    pub give_way_rear_speed: (f64, f64),
    pub stop_line_x: (f64, f64),
    pub time_limit: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            ego_speed: (5.0, 7.0),
            merge_gap: (24.0, 32.0),
            merge_lane_end: (65.0, 80.0),
            merge_stream_speed: (6.0, 8.0),
            merge_gap_offset: (-5.0, 12.0),
            merge_stream_spacing: 14.0,
            overtake_obstacle_x: (30.0, 45.0),
            overtake_obstacle_speed: (0.0, 1.5),
            brake_initial_gap: (15.0, 25.0),
            brake_trigger_distance: (10.0, 40.0),
            brake_decel: (5.0, 7.0),
            brake_hold: 1.5,
            give_way_rear_gap: (8.0, 20.0),
            give_way_rear_speed: (11.0, 13.0),
            stop_line_x: (25.0, 45.0),
            time_limit: DEFAULT_TIME_LIMIT,
        }
    }
}

fn sample(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn vehicle(id: usize, x: f64, lane: usize, speed: f64, script: AgentScript) -> Agent {
    Agent {
        id,
        x,
        y: lane_center(lane),
        speed,
        length: VEHICLE_LENGTH,
        width: VEHICLE_WIDTH,
        script,
    }
}

/// Deterministic world for `(kind, seed)` with default parameters.
pub fn spawn_scenario(kind: ScenarioKind, seed: u64) -> WorldState {
    ScenarioParams::default().spawn(kind, seed)
}

impl ScenarioParams {
    pub fn spawn(&self, kind: ScenarioKind, seed: u64) -> WorldState {
        let salt = 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(kind.id() as u64 + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
        let ego_speed = sample(&mut rng, self.ego_speed);
        let mut world = WorldState {
            kind,
            seed,
            ego: EgoState {
                pose: Pose {
                    x: 0.0,
                    y: 0.0,
                    heading: 0.0,
                },
                speed: ego_speed,
            },
            agents: Vec::new(),
            road: RoadLayout {
                left_lane: true,
                right_lane_end: None,
                stop_line: None,
            },
            start_x: 0.0,
            goal: [0.0, 0.0],
            time: 0.0,
            steps: 0,
            time_limit: self.time_limit,
            collisions: 0,
            violations: 0,
            stop: None,
            merge_gap: None,
            yield_to: None,
            termination: Termination::Running,
        };
        match kind {
            ScenarioKind::Merging => self.merging(&mut world, &mut rng),
            ScenarioKind::Overtaking => self.overtaking(&mut world, &mut rng),
            ScenarioKind::EmergencyBrake => self.emergency_brake(&mut world, &mut rng),
            ScenarioKind::GiveWay => self.give_way(&mut world, &mut rng),
            ScenarioKind::TrafficSign => self.traffic_sign(&mut world, &mut rng),
        }
        world
    }

    fn merging(&self, w: &mut WorldState, rng: &mut ChaCha8Rng) {
        let end = sample(rng, self.merge_lane_end);
        let gap = sample(rng, self.merge_gap);
        let speed = sample(rng, self.merge_stream_speed);
        let centre = sample(rng, self.merge_gap_offset);
        w.road.right_lane_end = Some(end);
        w.goal = [end + 25.0, lane_center(1)];
        let pitch = VEHICLE_LENGTH + self.merge_stream_spacing;
        let script = AgentScript::Cruise { desired_speed: speed };
        let mut ahead = Vec::new();
        let mut x = centre + 0.5 * gap + 0.5 * VEHICLE_LENGTH;
        while x < end + 120.0 {
            ahead.push(x);
            x += pitch;
        }
        let mut behind = Vec::new();
        let mut x = centre - 0.5 * gap - 0.5 * VEHICLE_LENGTH;
        while x > ROAD_START + 10.0 {
            behind.push(x);
            x -= pitch;
        }
        // Ids run rear to front so the gap is bounded by consecutive ids.
        let mut id = 0;
        for &x in behind.iter().rev() {
            w.agents.push(vehicle(id, x, 1, speed, script));
            id += 1;
        }
        let follower = id - 1;
        for &x in &ahead {
            w.agents.push(vehicle(id, x, 1, speed, script));
            id += 1;
        }
        w.merge_gap = Some((follower + 1, follower));
    }

    fn overtaking(&self, w: &mut WorldState, rng: &mut ChaCha8Rng) {
        let x = sample(rng, self.overtake_obstacle_x);
        let v = sample(rng, self.overtake_obstacle_speed);
        let script = if v < 0.3 {
            AgentScript::Static
        } else {
            AgentScript::Cruise { desired_speed: v }
        };
        let v = if v < 0.3 { 0.0 } else { v };
        w.agents.push(vehicle(0, x, 0, v, script));
        w.goal = [x + 55.0, lane_center(0)];
    }

    fn emergency_brake(&self, w: &mut WorldState, rng: &mut ChaCha8Rng) {
        let gap = sample(rng, self.brake_initial_gap);
        let trigger = sample(rng, self.brake_trigger_distance);
        let decel = sample(rng, self.brake_decel);
        let v = w.ego.speed;
        let x = w.ego.front() + gap + 0.5 * VEHICLE_LENGTH;
        w.road.left_lane = false;
        w.agents.push(vehicle(
            0,
            x,
            0,
            v,
            AgentScript::HardBrake {
                desired_speed: 8.0,
                trigger_x: x + trigger,
                decel,
                hold: self.brake_hold,
                phase: BrakePhase::Cruising,
            },
        ));
        w.goal = [110.0, lane_center(0)];
    }

    fn give_way(&self, w: &mut WorldState, rng: &mut ChaCha8Rng) {
        let gap = sample(rng, self.give_way_rear_gap);
        let v = sample(rng, self.give_way_rear_speed);
        let x = w.ego.rear() - gap - 0.5 * VEHICLE_LENGTH;
        w.agents.push(vehicle(0, x, 1, v, AgentScript::Cruise { desired_speed: v }));
        w.yield_to = Some(0);
        w.goal = [85.0, lane_center(1)];
    }

    fn traffic_sign(&self, w: &mut WorldState, rng: &mut ChaCha8Rng) {
        let line = sample(rng, self.stop_line_x);
        w.road.left_lane = false;
        w.road.stop_line = Some(line);
        w.stop = Some(StopLineState::default());
        w.goal = [line + 35.0, lane_center(0)];
    }
}
