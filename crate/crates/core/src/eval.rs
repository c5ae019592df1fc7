//! Closed-loop evaluation of a trained model in the scenario simulator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{ControlCommand, WaypointFollower};
use crate::error::{Error, Result};
use crate::experts::{ExpertId, EXPERT_COUNT};
use crate::model::{Model, Variant};
use crate::numerics::ParamSet;
use crate::sim::{observe, run_episode, DrivingPolicy, EpisodeOutcome, Metrics, ScenarioKind, ScenarioParams, WorldState, DT};

/// Keeps evaluation routes apart from dataset clips generated with the same seed.
const EVAL_SALT: u64 = 0xE7A1_5EED;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub episodes_per_scenario: usize,
    pub seed: u64,
    pub tau: f64,
    pub variant: Variant,
    pub time_limit: f64,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes_per_scenario == 0 {
            return Err(Error::Config("episodes_per_scenario must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        if !(self.time_limit > 0.0) {
            return Err(Error::Config(format!("time_limit {} must be positive", self.time_limit)));
        }
        Ok(())
    }

    /// Episode seeds per kind, fixed by `seed`.
    pub fn episode_seeds(&self) -> Vec<(ScenarioKind, u64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ EVAL_SALT);
        ScenarioKind::ALL
            .iter()
            .flat_map(|&k| (0..self.episodes_per_scenario).map(move |_| k))
            .map(|k| (k, rng.gen()))
            .collect()
    }
}

/// One routing decision made while driving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteTrace {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub step: u64,
    pub probs: Vec<f64>,
    pub uncertainty: f64,
    pub selected: ExpertId,
}

/// The learned policy driving through the waypoint follower.
pub struct ModelPolicy<'a> {
    model: &'a Model,
    params: &'a ParamSet,
    variant: Variant,
    tau: f64,
    follower: WaypointFollower,
    pub traces: Vec<RouteTrace>,
}

impl<'a> ModelPolicy<'a> {
    pub fn new(model: &'a Model, params: &'a ParamSet, variant: Variant, tau: f64) -> Self {
        Self {
            model,
            params,
            variant,
            tau,
            follower: WaypointFollower::default(),
            traces: Vec::new(),
        }
    }
}

impl DrivingPolicy for ModelPolicy<'_> {
    fn reset(&mut self) {
        self.follower.reset();
    }

    fn control(&mut self, world: &WorldState) -> Result<ControlCommand> {
        let obs = observe(world);
        let pred = self.model.predict(self.params, &obs, self.variant, self.tau)?;
        self.traces.push(RouteTrace {
            kind: world.kind,
            seed: world.seed,
            step: world.steps,
            probs: pred.decision.distribution.probs,
            uncertainty: pred.decision.distribution.uncertainty,
            selected: pred.decision.selected,
        });
        Ok(self.follower.control(&pred.waypoints, world.ego.speed, DT))
    }
}

/// Router accuracy and expert utilization over every driving step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingStats {
    /// Steps per kind.
    pub steps: [usize; ScenarioKind::COUNT],
    /// Router argmax accuracy in percent per kind, `None` without steps.
    pub accuracy: [Option<f64>; ScenarioKind::COUNT],
    pub overall_accuracy: f64,
    /// Percent of steps handled by each expert, rows in bank order; column 0
    /// is overall, columns 1..=5 are the kinds.
    pub utilization: [[f64; 1 + ScenarioKind::COUNT]; EXPERT_COUNT],
}

impl RoutingStats {
    pub fn from_traces(traces: &[RouteTrace]) -> Self {
        let mut steps = [0usize; ScenarioKind::COUNT];
        let mut hits = [0usize; ScenarioKind::COUNT];
        let mut counts = [[0usize; 1 + ScenarioKind::COUNT]; EXPERT_COUNT];
        for t in traces {
            let k = t.kind.id();
            steps[k] += 1;
            if crate::numerics::argmax(&t.probs) == k {
                hits[k] += 1;
            }
            counts[t.selected.index()][0] += 1;
            counts[t.selected.index()][1 + k] += 1;
        }
        let pct = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
        let mut accuracy = [None; ScenarioKind::COUNT];
        for k in 0..ScenarioKind::COUNT {
            if steps[k] > 0 {
                accuracy[k] = Some(pct(hits[k], steps[k]));
            }
        }
        let total: usize = steps.iter().sum();
        let mut utilization = [[0.0; 1 + ScenarioKind::COUNT]; EXPERT_COUNT];
        for (row, c) in utilization.iter_mut().zip(&counts) {
            row[0] = pct(c[0], total);
            for k in 0..ScenarioKind::COUNT {
                row[1 + k] = pct(c[1 + k], steps[k]);
            }
        }
        Self {
            steps,
            accuracy,
            overall_accuracy: pct(hits.iter().sum(), total),
            utilization,
        }
    }

    /// Percent of all steps that went to the global expert.
    pub fn global_utilization(&self) -> f64 {
        self.utilization[ExpertId::Global.index()][0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub outcomes: Vec<EpisodeOutcome>,
    pub metrics: Metrics,
    pub routing: RoutingStats,
}

/// Runs every evaluation episode. Outcomes and traces are in episode order.
pub fn evaluate(model: &Model, params: &ParamSet, config: &EvalConfig) -> Result<(EvalReport, Vec<RouteTrace>)> {
    config.validate()?;
    let scenario = ScenarioParams {
        time_limit: config.time_limit,
        ..ScenarioParams::default()
    };
    let mut outcomes = Vec::new();
    let mut traces = Vec::new();
    for (kind, seed) in config.episode_seeds() {
        let mut policy = ModelPolicy::new(model, params, config.variant, config.tau);
        outcomes.push(run_episode(scenario.spawn(kind, seed), &mut policy)?);
        traces.append(&mut policy.traces);
    }
    let report = EvalReport {
        config: config.clone(),
        metrics: Metrics::from_outcomes(&outcomes),
        routing: RoutingStats::from_traces(&traces),
        outcomes,
    };
    Ok((report, traces))
}
