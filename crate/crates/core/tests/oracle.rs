use dualmoe_core::sim::{
    oracle_controls, privileged_state, run_episode, spawn_scenario, OraclePolicy, ScenarioKind, DT, PRIVILEGED_DIM,
};

#[test]
fn oracle_succeeds_in_at_least_95_percent_of_200_episodes_per_kind() {
    for kind in ScenarioKind::ALL {
        let ok = (0..200)
            .filter(|&seed| run_episode(spawn_scenario(kind, seed), &mut OraclePolicy).unwrap().success)
            .count();
        assert!(ok >= 190, "{kind}: {ok}/200");
    }
}

/// Privileged states visited by the oracle, every tenth physics step.
fn states(seeds: std::ops::Range<u64>) -> Vec<(Vec<f64>, usize)> {
    let mut out = Vec::new();
    for kind in ScenarioKind::ALL {
        for seed in seeds.clone() {
            let mut w = spawn_scenario(kind, seed);
            while !w.is_done() {
                if w.steps % 10 == 0 {
                    out.push((privileged_state(&w), kind.id()));
                }
                let c = oracle_controls(&w);
                w.step(c, DT).unwrap();
            }
        }
    }
    out
}

#[test]
fn privileged_states_are_linearly_separable_by_kind() {
    let train = states(0..20);
    let test = states(100..110);
    // One-vs-rest logistic regression by full-batch gradient descent.
    let mut w = vec![[0.0; PRIVILEGED_DIM]; ScenarioKind::COUNT];
    for _ in 0..300 {
        for (k, wk) in w.iter_mut().enumerate() {
            let mut g = [0.0; PRIVILEGED_DIM];
            for (x, y) in &train {
                let z: f64 = wk.iter().zip(x).map(|(a, b)| a * b).sum();
                let p = 1.0 / (1.0 + (-z).exp());
                let t = if *y == k { 1.0 } else { 0.0 };
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi += (p - t) * xi;
                }
            }
            for (a, gi) in wk.iter_mut().zip(g) {
                *a -= 1.0 * gi / train.len() as f64;
            }
        }
    }
    let predict = |x: &[f64]| {
        let scores: Vec<f64> = w.iter().map(|wk| wk.iter().zip(x).map(|(a, b)| a * b).sum()).collect();
        dualmoe_core::numerics::argmax(&scores)
    };
    let hits = test.iter().filter(|(x, y)| predict(x) == *y).count();
    let acc = hits as f64 / test.len() as f64;
    assert!(acc >= 0.99, "probe accuracy {acc}");
}
