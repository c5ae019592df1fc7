use serde::{Deserialize, Serialize};

use super::ScenarioKind;
use crate::controller::ControlCommand;
use crate::error::{Error, Result};

pub const DT: f64 = 0.05;
pub const PHYSICS_HZ: usize = 20;
/// Physics steps between 2 Hz records / waypoints.
pub const STEPS_PER_RECORD: usize = 10;
pub const WHEELBASE: f64 = 2.7;
pub const MAX_STEER: f64 = 1.0;
pub const A_MAX: f64 = 3.5;
pub const B_MAX: f64 = 8.0;
pub const DRAG: f64 = 0.05;
pub const V_MAX: f64 = 15.0;
pub const LANE_WIDTH: f64 = 3.5;
pub const VEHICLE_LENGTH: f64 = 4.5;
pub const VEHICLE_WIDTH: f64 = 1.9;
/// Speed below which the ego counts as stopped at a stop line.
pub const STOP_SPEED: f64 = 0.2;
/// Time the ego must stay stopped before the stop line clears.
pub const STOP_HOLD: f64 = 1.0;
/// The stopping zone extends this far before the line.
pub const STOP_ZONE: f64 = 4.0;
/// A lateral offset from the goal lane centre within which the goal counts as reached.
/// Paved shoulder beyond the outermost lane edges.
pub const SHOULDER: f64 = 1.0;
pub const GOAL_LATERAL_TOLERANCE: f64 = 1.75;
pub const ROAD_START: f64 = -80.0;
pub const ROAD_END: f64 = 400.0;

pub fn lane_center(lane: usize) -> f64 {
    lane as f64 * LANE_WIDTH
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    /// Expresses a world point in this pose's frame (x forward, y left).
    pub fn to_local(&self, wx: f64, wy: f64) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        let dx = wx - self.x;
        let dy = wy - self.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn to_world(&self, lx: f64, ly: f64) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        [self.x + c * lx - s * ly, self.y + s * lx + c * ly]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub pose: Pose,
    pub speed: f64,
}

impl EgoState {
    pub fn front(&self) -> f64 {
        self.pose.x + 0.5 * VEHICLE_LENGTH * self.pose.heading.cos()
    }

    pub fn rear(&self) -> f64 {
        self.pose.x - 0.5 * VEHICLE_LENGTH * self.pose.heading.cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BrakePhase {
    Cruising,
    Braking,
    Holding { remaining: f64 },
    Resumed,
}

/// Behaviour script of a non-ego agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AgentScript {
    Static,
    /// Car-following at a desired speed; yields to anything ahead in its lane, the ego included.
    Cruise { desired_speed: f64 },
    /// Cruises until `trigger_x`, brakes at `decel` to a stop, holds, then cruises again.
    HardBrake {
        desired_speed: f64,
        trigger_x: f64,
        decel: f64,
        hold: f64,
        phase: BrakePhase,
    },
}

impl AgentScript {
    pub fn id(&self) -> u8 {
        match self {
            AgentScript::Static => 0,
            AgentScript::Cruise { .. } => 1,
            AgentScript::HardBrake { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
    pub script: AgentScript,
}

impl Agent {
    pub fn front(&self) -> f64 {
        self.x + 0.5 * self.length
    }

    pub fn rear(&self) -> f64 {
        self.x - 0.5 * self.length
    }

    pub fn contains(&self, wx: f64, wy: f64) -> bool {
        (wx - self.x).abs() <= 0.5 * self.length && (wy - self.y).abs() <= 0.5 * self.width
    }
}

/// Straight two-lane road along +x. Lane 0 is the right lane (y = 0),
/// lane 1 the left lane (y = 3.5).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadLayout {
    pub left_lane: bool,
    /// Lane 0 ends (taper) at this x.
    pub right_lane_end: Option<f64>,
    pub stop_line: Option<f64>,
}

impl RoadLayout {
    pub fn drivable(&self, x: f64, y: f64) -> bool {
        if !(ROAD_START..=ROAD_END).contains(&x) {
            return false;
        }
        let half = 0.5 * LANE_WIDTH;
        let right_top = if self.left_lane { half } else { half + SHOULDER };
        let in_right =
            (-half - SHOULDER..=right_top).contains(&y) && self.right_lane_end.map_or(true, |end| x <= end);
        let in_left = self.left_lane && (half..=half + LANE_WIDTH + SHOULDER).contains(&y);
        in_right || in_left
    }

    pub fn lane_count(&self) -> usize {
        if self.left_lane {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StopLineState {
    pub held_for: f64,
    pub cleared: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Running,
    GoalReached,
    MissedGoal,
    Collision,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub ego: EgoState,
    pub agents: Vec<Agent>,
    pub road: RoadLayout,
    pub start_x: f64,
    pub goal: [f64; 2],
    pub time: f64,
    pub steps: u64,
    pub time_limit: f64,
    pub collisions: u32,
    pub violations: u32,
    pub stop: Option<StopLineState>,
    /// Merging: ids of the (leader, follower) that bound the mergeable gap.
    pub merge_gap: Option<(usize, usize)>,
    /// Give Way: id of the rear agent the ego must let pass.
    pub yield_to: Option<usize>,
    pub termination: Termination,
}

impl WorldState {
    pub fn agent(&self, id: usize) -> Option<&Agent> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn is_done(&self) -> bool {
        self.termination != Termination::Running
    }

    /// Route completion in `[0, 1]`.
    pub fn completion(&self) -> f64 {
        let total = self.goal[0] - self.start_x;
        ((self.ego.pose.x - self.start_x) / total).clamp(0.0, 1.0)
    }

    pub fn success(&self) -> bool {
        self.termination == Termination::GoalReached && self.collisions == 0 && self.violations == 0
    }

    /// Whether the Give Way rear agent has fully passed the ego.
    pub fn yield_target_passed(&self) -> bool {
        match self.yield_to.and_then(|id| self.agent(id)) {
            Some(a) => a.rear() > self.ego.front() + 4.0,
            None => true,
        }
    }

    /// Advances the world by `dt` under `control`.
    pub fn step(&mut self, control: ControlCommand, dt: f64) -> Result<()> {
        if !(control.throttle.is_finite() && control.brake.is_finite() && control.steer.is_finite()) {
            return Err(Error::NonFinite("control command"));
        }
        if !(0.0..=1.0).contains(&control.throttle) || !(0.0..=1.0).contains(&control.brake) {
            return Err(Error::InvalidArgument(format!(
                "throttle/brake outside [0,1]: {control:?}"
            )));
        }
        if self.is_done() {
            return Ok(());
        }
        let steer = control.steer.clamp(-1.0, 1.0);
        let ego = &mut self.ego;
        let v = ego.speed;
        let accel = A_MAX * control.throttle - B_MAX * control.brake - DRAG * v;
        let v_next = (v + accel * dt).clamp(0.0, V_MAX);
        ego.pose.heading += v / WHEELBASE * (steer * MAX_STEER).tan() * dt;
        ego.pose.x += v_next * ego.pose.heading.cos() * dt;
        ego.pose.y += v_next * ego.pose.heading.sin() * dt;
        ego.speed = v_next;

        self.advance_agents(dt);
        self.time += dt;
        self.steps += 1;
        self.update_rules(dt);
        self.update_termination();
        Ok(())
    }

    fn advance_agents(&mut self, dt: f64) {
        let snapshot: Vec<Agent> = self.agents.clone();
        let ego = self.ego;
        for (agent, me) in self.agents.iter_mut().zip(&snapshot) {
            let accel = match &mut agent.script {
                AgentScript::Static => {
                    agent.speed = 0.0;
                    continue;
                }
                AgentScript::Cruise { desired_speed } => {
                    let lead = lane_leader(&snapshot, &ego, me);
                    cruise_accel(agent.speed, *desired_speed, lead)
                }
                AgentScript::HardBrake {
                    desired_speed,
                    trigger_x,
                    decel,
                    hold,
                    phase,
                } => match *phase {
                    BrakePhase::Cruising => {
                        if agent.x >= *trigger_x {
                            *phase = BrakePhase::Braking;
                            -*decel
                        } else {
                            cruise_accel(agent.speed, *desired_speed, None)
                        }
                    }
                    BrakePhase::Braking => {
                        if agent.speed <= 0.0 {
                            *phase = BrakePhase::Holding { remaining: *hold };
                            0.0
                        } else {
                            -*decel
                        }
                    }
                    BrakePhase::Holding { remaining } => {
                        let r = remaining - dt;
                        *phase = if r <= 0.0 {
                            BrakePhase::Resumed
                        } else {
                            BrakePhase::Holding { remaining: r }
                        };
                        0.0
                    }
                    BrakePhase::Resumed => cruise_accel(agent.speed, *desired_speed, None),
                },
            };
            agent.speed = (agent.speed + accel * dt).max(0.0);
            agent.x += agent.speed * dt;
        }
    }

    fn update_rules(&mut self, dt: f64) {
        let ego = self.ego;
        if let (Some(line), Some(stop)) = (self.road.stop_line, self.stop.as_mut()) {
            if !stop.cleared {
                let front = ego.front();
                if front > line {
                    stop.cleared = true;
                    self.violations += 1;
                } else if front >= line - STOP_ZONE && ego.speed < STOP_SPEED {
                    stop.held_for += dt;
                    if stop.held_for >= STOP_HOLD - 1e-9 {
                        stop.cleared = true;
                    }
                } else {
                    stop.held_for = 0.0;
                }
            }
        }
        if let Some(id) = self.yield_to {
            let entered = ego.pose.y > 0.5 * LANE_WIDTH - 0.5 * VEHICLE_WIDTH;
            if entered && !self.yield_target_passed() {
                if let Some(a) = self.agent(id) {
                    // Cutting in ahead of (or beside) an approaching vehicle within 30 m.
                    if a.front() > ego.rear() - 30.0 {
                        self.violations += 1;
                        self.yield_to = None;
                    }
                }
            }
        }
    }

    fn update_termination(&mut self) {
        let ego_box = Rect::ego(&self.ego);
        if self.agents.iter().any(|a| ego_box.intersects(&Rect::agent(a)))
            || !ego_box.corners().iter().all(|c| self.road.drivable(c[0], c[1]))
        {
            self.collisions += 1;
            self.termination = Termination::Collision;
            return;
        }
        if self.ego.pose.x >= self.goal[0] {
            self.termination = if (self.ego.pose.y - self.goal[1]).abs() <= GOAL_LATERAL_TOLERANCE {
                Termination::GoalReached
            } else {
                Termination::MissedGoal
            };
            return;
        }
        if self.time >= self.time_limit - 1e-9 {
            self.termination = Termination::Timeout;
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IdmParams {
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub time_headway: f64,
    pub min_gap: f64,
}

pub const AGENT_IDM: IdmParams = IdmParams {
    max_accel: 1.5,
    comfort_decel: 3.0,
    time_headway: 1.2,
    min_gap: 3.0,
};

/// Leader seen by an agent: `(bumper gap, leader speed)`.
fn lane_leader(all: &[Agent], ego: &EgoState, me: &Agent) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    let mut consider = |gap: f64, speed: f64| {
        if gap > -0.5 && best.map_or(true, |(g, _)| gap < g) {
            best = Some((gap, speed));
        }
    };
    for other in all {
        if other.id != me.id && (other.y - me.y).abs() < 1.5 && other.x > me.x {
            consider(other.rear() - me.front(), other.speed);
        }
    }
    if (ego.pose.y - me.y).abs() < 0.5 * (VEHICLE_WIDTH + me.width) + 0.3 && ego.pose.x > me.x {
        consider(ego.rear() - me.front(), ego.speed);
    }
    best
}

/// Speed tracking toward `v0`, switching to IDM braking only when the
/// leader is inside a one-second headway (plus closing-speed margin). A
/// platoon at equal speed and wider spacing therefore runs at constant speed.
pub fn cruise_accel(v: f64, v0: f64, leader: Option<(f64, f64)>) -> f64 {
    let mut a = (2.0 * (v0 - v)).clamp(-3.0, 1.5);
    if let Some((gap, vl)) = leader {
        if gap < 2.0 + v + 2.0 * (v - vl).max(0.0) {
            a = a.min(idm_accel(v, v0, leader, &AGENT_IDM));
        }
    }
    a
}

/// Intelligent-driver-model acceleration toward `v0`, optionally behind a
/// leader at `(gap, leader_speed)`.
pub fn idm_accel(v: f64, v0: f64, leader: Option<(f64, f64)>, p: &IdmParams) -> f64 {
    let free = 1.0 - (v / v0.max(0.1)).powi(4);
    let interaction = match leader {
        Some((gap, vl)) => {
            let dv = v - vl;
            let s_star = p.min_gap + (v * p.time_headway + v * dv / (2.0 * (p.max_accel * p.comfort_decel).sqrt())).max(0.0);
            (s_star / gap.max(0.1)).powi(2)
        }
        None => 0.0,
    };
    p.max_accel * (free - interaction)
}

/// Oriented rectangle for separating-axis collision tests.
#[derive(Debug, Clone, Copy)]
struct Rect {
    cx: f64,
    cy: f64,
    half_len: f64,
    half_wid: f64,
    heading: f64,
}

impl Rect {
    fn ego(e: &EgoState) -> Self {
        Rect {
            cx: e.pose.x,
            cy: e.pose.y,
            half_len: 0.5 * VEHICLE_LENGTH,
            half_wid: 0.5 * VEHICLE_WIDTH,
            heading: e.pose.heading,
        }
    }

    fn agent(a: &Agent) -> Self {
        Rect {
            cx: a.x,
            cy: a.y,
            half_len: 0.5 * a.length,
            half_wid: 0.5 * a.width,
            heading: 0.0,
        }
    }

    fn axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.heading.sin_cos();
        [[c, s], [-s, c]]
    }

    fn corners(&self) -> [[f64; 2]; 4] {
        let [u, w] = self.axes();
        let mut out = [[0.0; 2]; 4];
        for (k, (a, b)) in [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0)].iter().enumerate() {
            out[k] = [
                self.cx + a * self.half_len * u[0] + b * self.half_wid * w[0],
                self.cy + a * self.half_len * u[1] + b * self.half_wid * w[1],
            ];
        }
        out
    }

    fn intersects(&self, other: &Rect) -> bool {
        let (ca, cb) = (self.corners(), other.corners());
        for axis in self.axes().iter().chain(other.axes().iter()) {
            let proj = |cs: &[[f64; 2]; 4]| {
                cs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                    let p = c[0] * axis[0] + c[1] * axis[1];
                    (lo.min(p), hi.max(p))
                })
            };
            let (a0, a1) = proj(&ca);
            let (b0, b1) = proj(&cb);
            if a1 < b0 || b1 < a0 {
                return false;
            }
        }
        true
    }
}
