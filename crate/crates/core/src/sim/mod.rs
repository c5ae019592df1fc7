//! Synthetic 2D kinematic driving world: five scenario families, a scripted
//! privileged oracle, closed-loop rollouts and episode metrics.

mod metrics;
mod oracle;
mod raster;
mod rollout;
mod scenario;
mod world;

pub use metrics::{driving_score, EpisodeOutcome, Metrics};
pub use oracle::{
    oracle_controls, oracle_policy, privileged_state, OracleStep, Projection, PRIVILEGED_DIM, TEACHER_FEATURE_DIM,
};
pub use raster::{navigation_command, observe};
pub use rollout::{
    discounted_values, rollout_oracle, rollout_oracle_perturbed, run_episode, Perturbation, DrivingPolicy, EpisodeRecord, OraclePolicy, RecordedStep, GAMMA,
};
pub use scenario::{spawn_scenario, ScenarioParams, DEFAULT_TIME_LIMIT};
pub use world::*;

use serde::{Deserialize, Serialize};

/// Number of waypoints per plan (2 Hz, +0.5 s … +2.0 s).
pub const WAYPOINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioKind {
    Merging = 0,
    Overtaking = 1,
    EmergencyBrake = 2,
    GiveWay = 3,
    TrafficSign = 4,
}

impl ScenarioKind {
    pub const COUNT: usize = 5;
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::Merging,
        ScenarioKind::Overtaking,
        ScenarioKind::EmergencyBrake,
        ScenarioKind::GiveWay,
        ScenarioKind::TrafficSign,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Merging => "merging",
            ScenarioKind::Overtaking => "overtaking",
            ScenarioKind::EmergencyBrake => "emergency_brake",
            ScenarioKind::GiveWay => "give_way",
            ScenarioKind::TrafficSign => "traffic_sign",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
