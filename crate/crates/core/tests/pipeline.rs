use piforge::{
    estimate_pi, run_study, simulate_dataset, AlgorithmConfig, ErrorFamily, ExpressionMatrix,
    Method, SimulationConfig, StudyOptions,
};

fn dataset(seed: u64) -> ExpressionMatrix {
    simulate_dataset(&SimulationConfig {
        genes: 2000,
        lambda: 0.3,
        error_family: ErrorFamily::ChisqVariance,
        seed,
        ..SimulationConfig::default()
    })
    .unwrap()
    .0
}

#[test]
fn estimate_ignores_row_order() {
    let m = dataset(1);
    let perm: Vec<usize> = (0..m.n_genes()).rev().collect();
    let mut values = Vec::with_capacity(m.values().len());
    for &g in &perm {
        values.extend_from_slice(m.row(g));
    }
    let shuffled = ExpressionMatrix::new(
        perm.iter().map(|&g| m.gene_ids()[g].clone()).collect(),
        m.sample_ids().to_vec(),
        values,
        &m.labels(),
    )
    .unwrap();
    let cfg = AlgorithmConfig {
        seed: 2,
        ..AlgorithmConfig::default()
    };
    let a = estimate_pi(&m, &cfg).unwrap();
    let b = estimate_pi(&shuffled, &cfg).unwrap();
    assert_eq!(a.pi_hat, b.pi_hat);
    for (pos, &g) in perm.iter().enumerate() {
        assert_eq!(a.state.candidates[g], b.state.candidates[pos]);
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let m = dataset(3);
    let cfg = AlgorithmConfig {
        seed: 4,
        ..AlgorithmConfig::default()
    };
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let multi = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let a = single.install(|| estimate_pi(&m, &cfg).unwrap());
    let b = multi.install(|| estimate_pi(&m, &cfg).unwrap());
    assert_eq!(a.state.candidates, b.state.candidates);
    assert_eq!(a.eta, b.eta);

    let base = SimulationConfig {
        genes: 500,
        seed: 5,
        ..SimulationConfig::default()
    };
    let study = || {
        run_study(
            &base,
            &[0.2, 0.7],
            &[2.0],
            &Method::ALL,
            2,
            &StudyOptions::default(),
        )
        .unwrap()
    };
    assert_eq!(single.install(study), multi.install(study));
}

#[test]
fn different_seeds_give_nearby_estimates() {
    let m = dataset(6);
    let est: Vec<f64> = (0..3)
        .map(|s| {
            estimate_pi(
                &m,
                &AlgorithmConfig {
                    seed: s,
                    ..AlgorithmConfig::default()
                },
            )
            .unwrap()
            .pi_hat
        })
        .collect();
    let spread =
        est.iter().cloned().fold(f64::MIN, f64::max) - est.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread < 0.1, "{est:?}");
}
