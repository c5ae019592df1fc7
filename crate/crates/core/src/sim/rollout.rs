use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::EpisodeOutcome;
use super::oracle::{oracle_controls, oracle_policy, OracleStep, Projection};
use super::raster::observe;
use super::scenario::ScenarioParams;
use super::world::*;
use super::ScenarioKind;
use crate::controller::ControlCommand;
use crate::encoders::Observation;
use crate::error::{Error, Result};

pub const GAMMA: f64 = 0.99;
pub const COLLISION_REWARD: f64 = -100.0;
pub const VIOLATION_REWARD: f64 = -10.0;

/// A closed-loop controller queried at every physics step.
pub trait DrivingPolicy {
    /// Called once before an episode starts.
    fn reset(&mut self) {}
    fn control(&mut self, world: &WorldState) -> Result<ControlCommand>;
}

/// The scripted oracle as a closed-loop policy.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePolicy;

impl DrivingPolicy for OraclePolicy {
    fn control(&mut self, world: &WorldState) -> Result<ControlCommand> {
        Ok(oracle_controls(world))
    }
}

/// Runs `policy` from `world` until the episode terminates.
pub fn run_episode(mut world: WorldState, policy: &mut dyn DrivingPolicy) -> Result<EpisodeOutcome> {
    policy.reset();
    while !world.is_done() {
        let c = policy.control(&world)?;
        world.step(c, DT)?;
    }
    Ok(EpisodeOutcome::from_world(&world))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedStep {
    pub obs: Observation,
    pub oracle: OracleStep,
}

/// One oracle-driven clip recorded at 2 Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub steps: Vec<RecordedStep>,
    pub outcome: EpisodeOutcome,
}

/// `value_t = reward_t + γ·value_{t+1}` with terminal value 0.
pub fn discounted_values(rewards: &[f64]) -> Vec<f64> {
    let mut values = vec![0.0; rewards.len()];
    let mut next = 0.0;
    for (v, r) in values.iter_mut().zip(rewards).rev() {
        *v = r + GAMMA * next;
        next = *v;
    }
    values
}

/// Disturbances applied to the executed oracle controls while recording, so
/// the data covers off-nominal states. Labels always come from the clean
/// oracle plan at the disturbed state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    /// Chance, per record interval, of starting a disturbance.
    pub rate: f64,
    /// Share of disturbances that force a stop instead of a steering offset.
    pub stop_share: f64,
    /// Magnitude range of the steering offset added to the oracle command.
    pub steer: (f64, f64),
    pub steer_duration: (f64, f64),
    pub stop_duration: (f64, f64),
}

impl Perturbation {
    pub const NONE: Perturbation = Perturbation {
        rate: 0.0,
        stop_share: 0.0,
        steer: (0.0, 0.0),
        steer_duration: (0.0, 0.0),
        stop_duration: (0.0, 0.0),
    };

    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi;
        if !(0.0..=1.0).contains(&self.rate) || !(0.0..=1.0).contains(&self.stop_share) {
            return Err(Error::Config(format!(
                "perturbation rate {} and stop_share {} must lie in [0, 1]",
                self.rate, self.stop_share
            )));
        }
        if ![self.steer, self.steer_duration, self.stop_duration].into_iter().all(range_ok) {
            return Err(Error::Config("perturbation ranges must be finite with 0 <= lo <= hi".into()));
        }
        Ok(())
    }
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            rate: 0.1,
            stop_share: 0.3,
            steer: (0.03, 0.12),
            steer_duration: (0.5, 1.5),
            stop_duration: (1.0, 3.0),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Disturbance {
    Steer { offset: f64, until: f64 },
    Stop { until: f64 },
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Drives `(kind, seed)` with the oracle for at most `t_max` seconds,
/// recording an observation and teacher targets every 0.5 s.
pub fn rollout_oracle(kind: ScenarioKind, seed: u64, t_max: f64, projection: &Projection) -> Result<EpisodeRecord> {
    rollout_oracle_perturbed(kind, seed, t_max, projection, &Perturbation::NONE)
}

/// [`rollout_oracle`] with disturbed execution; deterministic per `(kind, seed)`.
pub fn rollout_oracle_perturbed(
    kind: ScenarioKind,
    seed: u64,
    t_max: f64,
    projection: &Projection,
    perturbation: &Perturbation,
) -> Result<EpisodeRecord> {
    let params = ScenarioParams {
        time_limit: t_max,
        ..ScenarioParams::default()
    };
    let mut world = params.spawn(kind, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD157_0B5E ^ (kind.id() as u64) << 56);
    let mut active: Option<Disturbance> = None;
    let mut steps: Vec<RecordedStep> = Vec::new();
    let mut marks: Vec<(f64, u32, u32)> = Vec::new();
    while !world.is_done() {
        if world.steps % STEPS_PER_RECORD as u64 == 0 {
            steps.push(RecordedStep {
                obs: observe(&world),
                oracle: oracle_policy(&world, projection),
            });
            marks.push((world.ego.pose.x, world.collisions, world.violations));
            if active.is_none() && perturbation.rate > 0.0 && rng.gen_bool(perturbation.rate.min(1.0)) {
                active = Some(if rng.gen_bool(perturbation.stop_share.clamp(0.0, 1.0)) {
                    Disturbance::Stop {
                        until: world.time + uniform(&mut rng, perturbation.stop_duration),
                    }
                } else {
                    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    Disturbance::Steer {
                        offset: sign * uniform(&mut rng, perturbation.steer),
                        until: world.time + uniform(&mut rng, perturbation.steer_duration),
                    }
                });
            }
        }
        let mut c = oracle_controls(&world);
        match active {
            Some(Disturbance::Steer { offset, until }) if world.time < until => {
                c = ControlCommand::new(c.throttle, c.brake, c.steer + offset);
            }
            Some(Disturbance::Stop { until }) if world.time < until => {
                c = ControlCommand::new(0.0, 1.0, c.steer);
            }
            _ => active = None,
        }
        world.step(c, DT)?;
    }
    marks.push((world.ego.pose.x, world.collisions, world.violations));
    let rewards: Vec<f64> = marks
        .windows(2)
        .map(|m| {
            let (x0, c0, v0) = m[0];
            let (x1, c1, v1) = m[1];
            (x1 - x0) + COLLISION_REWARD * (c1 - c0) as f64 + VIOLATION_REWARD * (v1 - v0) as f64
        })
        .collect();
    for ((s, r), v) in steps.iter_mut().zip(&rewards).zip(discounted_values(&rewards)) {
        s.oracle.reward = *r;
        s.oracle.value = v;
    }
    Ok(EpisodeRecord {
        kind,
        seed,
        steps,
        outcome: EpisodeOutcome::from_world(&world),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discounting_by_hand() {
        let v = discounted_values(&[1.0, 2.0, 3.0]);
        assert_eq!(v[2], 3.0);
        assert_eq!(v[1], 2.0 + 0.99 * 3.0);
        assert_eq!(v[0], 1.0 + 0.99 * (2.0 + 0.99 * 3.0));
        assert!(discounted_values(&[]).is_empty());
    }

    #[test]
    fn record_values_recompute_exactly() {
        let p = Projection::from_seed(1);
        let rec = rollout_oracle(ScenarioKind::EmergencyBrake, 4, 40.0, &p).unwrap();
        assert!(!rec.steps.is_empty());
        assert!(rec.steps.len() <= 80);
        let n = rec.steps.len();
        assert_eq!(rec.steps[n - 1].oracle.value, rec.steps[n - 1].oracle.reward);
        for t in 0..n - 1 {
            let s = &rec.steps[t].oracle;
            assert_eq!(s.value, s.reward + GAMMA * rec.steps[t + 1].oracle.value);
        }
    }

    #[test]
    fn rollouts_are_deterministic() {
        let p = Projection::from_seed(1);
        let a = rollout_oracle(ScenarioKind::Merging, 9, 40.0, &p).unwrap();
        let b = rollout_oracle(ScenarioKind::Merging, 9, 40.0, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn short_time_limit_bounds_the_record() {
        let p = Projection::from_seed(1);
        let rec = rollout_oracle(ScenarioKind::TrafficSign, 0, 3.0, &p).unwrap();
        assert!(rec.steps.len() <= 6);
        assert!(rec.outcome.timeout);
    }
}
