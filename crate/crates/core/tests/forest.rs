use survkit::matrix::Matrix;
use survkit::metrics::harrell_cindex;
use survkit::models::forest::{fit_forest, ForestKind, ForestParams};
use survkit::models::{risk_batch, FittedModel};
use survkit::survcore::{nelson_aalen, SurvivalOutcome};
use survkit::synth::{generate_cohort, sparse_linear_spec};

/// High x0 dies at t=1, low x0 is censored at t=10; x1 is noise.
fn separated() -> (Matrix<f64>, Vec<SurvivalOutcome<f64>>) {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in 0..20 {
        rows.push(vec![1.0 + i as f64 * 0.05, ((i * 7) % 5) as f64]);
        y.push(SurvivalOutcome::death(1.0));
        rows.push(vec![-1.0 - i as f64 * 0.05, ((i * 3) % 5) as f64]);
        y.push(SurvivalOutcome::censored(10.0));
    }
    (Matrix::from_rows(&rows).unwrap(), y)
}

#[test]
fn depth_zero_tree_is_pooled_nelson_aalen() {
    let (cohort, _) = generate_cohort(&sparse_linear_spec(200, 4, 2, 0.7, 9)).unwrap();
    let (x, _) = cohort.design_matrix();
    for kind in [ForestKind::Est, ForestKind::Rsf] {
        let params = ForestParams { n_trees: 1, max_depth: Some(0), bootstrap: Some(false), ..Default::default() };
        let f = fit_forest(&x, &cohort.outcomes, &params, kind, 1).unwrap();
        let pooled = nelson_aalen(&cohort.outcomes);
        for r in [0, 17, 199] {
            assert_eq!(f.cumulative_hazard(x.row(r)).unwrap(), pooled.eval_many(&f.grid));
        }
    }
}

#[test]
fn separated_cohort_is_perfectly_ranked() {
    let (x, y) = separated();
    let params = ForestParams { n_trees: 50, ..Default::default() };
    let f = fit_forest(&x, &y, &params, ForestKind::Est, 4).unwrap();
    let risks = risk_batch(&FittedModel::Forest(f), &x).unwrap();
    assert_eq!(harrell_cindex(&risks, &y).unwrap().c_index, 1.0);
}

#[test]
fn identical_across_thread_counts() {
    let (cohort, _) = generate_cohort(&sparse_linear_spec(300, 8, 3, 0.8, 2)).unwrap();
    let (x, _) = cohort.design_matrix();
    for kind in [ForestKind::Est, ForestKind::Rsf] {
        let fit = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| fit_forest(&x, &cohort.outcomes, &ForestParams { n_trees: 20, ..Default::default() }, kind, 77))
                .unwrap()
        };
        let one = fit(1);
        assert_eq!(one, fit(4));
        assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&fit(3)).unwrap());
    }
}

#[test]
fn different_seeds_differ() {
    let (cohort, _) = generate_cohort(&sparse_linear_spec(150, 5, 2, 0.8, 2)).unwrap();
    let (x, _) = cohort.design_matrix();
    let p = ForestParams { n_trees: 5, ..Default::default() };
    let a = fit_forest(&x, &cohort.outcomes, &p, ForestKind::Est, 1).unwrap();
    let b = fit_forest(&x, &cohort.outcomes, &p, ForestKind::Est, 2).unwrap();
    assert_ne!(a.trees, b.trees);
}

#[test]
fn survival_curves_are_monotone() {
    let (cohort, _) = generate_cohort(&sparse_linear_spec(200, 5, 2, 0.8, 6)).unwrap();
    let (x, _) = cohort.design_matrix();
    let f = fit_forest(&x, &cohort.outcomes, &ForestParams { n_trees: 10, ..Default::default() }, ForestKind::Rsf, 0)
        .unwrap();
    for r in 0..20 {
        let (_, curve) = f.predict(x.row(r)).unwrap();
        let v = curve.step.values();
        assert!(v.windows(2).all(|w| w[1] <= w[0]));
        assert!(v.iter().all(|s| (0.0..=1.0).contains(s)));
    }
}
