#![allow(dead_code)]

use dualmoe_core::encoders::{Command, Observation, GRID_LEN};
use dualmoe_core::experts::FEATURE_DIM;
use dualmoe_core::sim::{ScenarioKind, WAYPOINTS};
use dualmoe_core::trainer::Sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A sample with random observation and targets of realistic magnitude.
pub fn random_sample(rng: &mut ChaCha8Rng, kind: ScenarioKind) -> Sample {
    let mut waypoints = [[0.0; 2]; WAYPOINTS];
    for (i, w) in waypoints.iter_mut().enumerate() {
        w[0] = rng.gen_range(0.0..5.0) * (i + 1) as f64;
        w[1] = rng.gen_range(-2.0..2.0);
    }
    let command = [Command::Follow, Command::ChangeLeft, Command::ChangeRight][rng.gen_range(0..3)];
    Sample {
        kind,
        obs: Observation {
            grid: (0..GRID_LEN).map(|_| if rng.gen_bool(0.3) { rng.gen_range(0.0..=1.0) } else { 0.0 }).collect(),
            speed: rng.gen_range(0.0..10.0),
            command,
            goal: [rng.gen_range(5.0..60.0), rng.gen_range(-4.0..4.0)],
        },
        waypoints,
        value: rng.gen_range(-20.0..120.0),
        feature: (0..FEATURE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        speed: rng.gen_range(0.0..10.0),
    }
}

pub fn random_kind(rng: &mut ChaCha8Rng) -> ScenarioKind {
    ScenarioKind::from_id(rng.gen_range(0..ScenarioKind::COUNT)).unwrap()
}
