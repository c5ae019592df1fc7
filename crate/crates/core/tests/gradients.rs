mod common;

use common::{random_kind, random_sample};
use dualmoe_core::experts::{ExpertBank, ExpertId};
use dualmoe_core::model::{Model, Variant};
use dualmoe_core::numerics::{finite_diff_grad, relative_error, ParamSet};
use dualmoe_core::sim::ScenarioKind;
use dualmoe_core::trainer::{batch_loss, batch_loss_and_grad, LossWeights, Sample};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const FLOOR: f64 = 1e-6;
const KINK_MARGIN: f64 = 1e-3;

/// Moves trajectory targets away from the predictions so no L1 term sits on
/// its kink.
fn nudge_off_kinks(model: &Model, ps: &ParamSet, s: &mut Sample) {
    let fused = model.encoders.encode(ps, &s.obs).unwrap();
    for out in model.bank.forward_all(ps, &fused).unwrap() {
        for (t, p) in s.waypoints.iter_mut().flatten().zip(out.waypoints.iter().flatten()) {
            if (*t - p).abs() < KINK_MARGIN {
                *t += 0.1;
            }
        }
    }
}

/// Compares backprop against central differences on `want` coordinates that
/// carry a measurable gradient; returns (compared, worst relative error).
fn check(variant: Variant, seed: u64, want: usize) -> (usize, f64) {
    let (model, mut ps) = Model::init(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = random_kind(&mut rng);
    let mut s = random_sample(&mut rng, kind);
    nudge_off_kinks(&model, &ps, &mut s);
    let w = LossWeights::default();
    ps.zero_grad();
    batch_loss_and_grad(&model, &mut ps, &[&s], &w, variant).unwrap();
    let analytic = ps.grads().to_vec();
    // Spread the draw over every tensor so no sub-network goes unchecked.
    let mut coords = Vec::new();
    for e in ps.entries() {
        let r = e.range();
        coords.extend((0..8).map(|_| rng.gen_range(r.clone())));
    }
    coords.shuffle(&mut rng);
    let mut extra: Vec<usize> = (0..4 * want).map(|_| rng.gen_range(0..ps.len())).collect();
    coords.append(&mut extra);
    coords.sort_unstable();
    coords.dedup();
    coords.shuffle(&mut rng);
    let fd = finite_diff_grad(&mut ps, Some(&coords), EPS, |p| {
        batch_loss(&model, p, &[&s], &w, variant).unwrap().total
    })
    .unwrap();
    let mut compared = 0;
    let mut worst: f64 = 0.0;
    for (&c, &numeric) in coords.iter().zip(&fd) {
        if let Some(e) = relative_error(analytic[c], numeric, FLOOR) {
            compared += 1;
            worst = worst.max(e);
            assert!(
                e < 1e-3,
                "{variant}: coordinate {c} backprop {} vs numeric {numeric}",
                analytic[c]
            );
        }
    }
    (compared, worst)
}

#[test]
fn full_loss_gradient_matches_finite_differences() {
    let (n, worst) = check(Variant::DualAware, 21, 500);
    assert!(n >= 500, "only {n} coordinates compared");
    assert!(worst < 1e-3);
}

#[test]
fn ablation_variant_gradients_match_finite_differences() {
    for (i, v) in [Variant::ScenarioMoe, Variant::VanillaMoe, Variant::SingleExpert].into_iter().enumerate() {
        let (n, _) = check(v, 40 + i as u64, 150);
        assert!(n >= 150, "{v}: only {n} coordinates compared");
    }
}

#[test]
fn scene_experts_absent_from_the_batch_get_exactly_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = LossWeights::default();
    for variant in [Variant::DualAware, Variant::ScenarioMoe] {
        let (model, mut ps) = Model::init(6);
        for k in ScenarioKind::ALL {
            let others: Vec<ScenarioKind> = ScenarioKind::ALL.into_iter().filter(|&o| o != k).collect();
            let batch: Vec<Sample> = (0..8)
                .map(|_| {
                    let o = *others.choose(&mut rng).unwrap();
                    random_sample(&mut rng, o)
                })
                .collect();
            let refs: Vec<&Sample> = batch.iter().collect();
            ps.zero_grad();
            batch_loss_and_grad(&model, &mut ps, &refs, &w, variant).unwrap();
            let coords = ps.coords_with_prefix(&ExpertBank::prefix(ExpertId::Scene(k)));
            assert!(!coords.is_empty());
            for c in coords {
                assert_eq!(ps.grads()[c].to_bits(), 0.0f64.to_bits(), "{variant}, expert {k}");
            }
            for o in others {
                let g = ps.coords_with_prefix(&ExpertBank::prefix(ExpertId::Scene(o)));
                if refs.iter().any(|s| s.kind == o) {
                    assert!(g.iter().any(|&c| ps.grads()[c] != 0.0), "{variant}: present expert {o} idle");
                }
            }
        }
    }
}

#[test]
fn batch_totals_are_the_weighted_sum_of_parts() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (model, mut ps) = Model::init(9);
    for i in 0..100 {
        let w = LossWeights {
            traj: rng.gen_range(0.0..2.0),
            feature: rng.gen_range(0.0..0.2),
            value: rng.gen_range(0.0..0.01),
            global: rng.gen_range(0.0..2.0),
            adaptive: rng.gen_range(0.0..2.0),
            scenario: rng.gen_range(0.0..2.0),
            speed: rng.gen_range(0.0..0.2),
        };
        let variant = Variant::ALL[i % Variant::ALL.len()];
        let batch: Vec<Sample> = (0..rng.gen_range(1..6))
            .map(|_| {
                let k = random_kind(&mut rng);
                random_sample(&mut rng, k)
            })
            .collect();
        let refs: Vec<&Sample> = batch.iter().collect();
        let forward = batch_loss(&model, &ps, &refs, &w, variant).unwrap();
        ps.zero_grad();
        let with_grad = batch_loss_and_grad(&model, &mut ps, &refs, &w, variant).unwrap();
        assert!((forward.total - forward.weighted_total(&w)).abs() < 1e-12);
        assert_eq!(forward.total.to_bits(), with_grad.total.to_bits());
    }
}
