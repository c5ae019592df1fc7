use serde::{Deserialize, Serialize};

use super::world::{Termination, WorldState};
use super::ScenarioKind;

pub const COLLISION_PENALTY: f64 = 0.5;
pub const VIOLATION_PENALTY: f64 = 0.7;

/// Per-episode score: `100 · completion · 0.5^collisions · 0.7^violations`.
pub fn driving_score(completion: f64, collisions: u32, violations: u32) -> f64 {
    100.0 * completion.clamp(0.0, 1.0) * COLLISION_PENALTY.powi(collisions as i32) * VIOLATION_PENALTY.powi(violations as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub success: bool,
    pub collision: bool,
    pub timeout: bool,
    pub collisions: u32,
    pub violations: u32,
    pub completion: f64,
    pub termination: Termination,
    pub steps: u64,
    pub driving_score: f64,
}

impl EpisodeOutcome {
    pub fn from_world(world: &WorldState) -> Self {
        let completion = if world.termination == Termination::GoalReached {
            1.0
        } else {
            world.completion()
        };
        Self {
            kind: world.kind,
            seed: world.seed,
            success: world.success(),
            collision: world.collisions > 0,
            timeout: world.termination == Termination::Timeout,
            collisions: world.collisions,
            violations: world.violations,
            completion,
            termination: world.termination,
            steps: world.steps,
            driving_score: driving_score(completion, world.collisions, world.violations),
        }
    }
}

/// Aggregate closed-loop metrics. Percentages are in `[0, 100]`; per-ability
/// entries are `None` for kinds without episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: usize,
    pub success_rate: f64,
    pub driving_score: f64,
    pub per_ability: [Option<f64>; ScenarioKind::COUNT],
    pub ability_mean: f64,
}

impl Metrics {
    pub fn from_outcomes(outcomes: &[EpisodeOutcome]) -> Self {
        let n = outcomes.len();
        let mean = |f: &dyn Fn(&EpisodeOutcome) -> f64| {
            if n == 0 {
                0.0
            } else {
                outcomes.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let success_rate = mean(&|o| if o.success { 100.0 } else { 0.0 });
        let driving_score = mean(&|o| o.driving_score);
        let mut per_ability = [None; ScenarioKind::COUNT];
        for kind in ScenarioKind::ALL {
            let of_kind: Vec<_> = outcomes.iter().filter(|o| o.kind == kind).collect();
            if !of_kind.is_empty() {
                let ok = of_kind.iter().filter(|o| o.success).count();
                per_ability[kind.id()] = Some(100.0 * ok as f64 / of_kind.len() as f64);
            }
        }
        let defined: Vec<f64> = per_ability.iter().flatten().copied().collect();
        let ability_mean = if defined.is_empty() {
            0.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        };
        Self {
            episodes: n,
            success_rate,
            driving_score,
            per_ability,
            ability_mean,
        }
    }
}
