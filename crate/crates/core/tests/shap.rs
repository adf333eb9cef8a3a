use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use survkit::explain::{kernel_shap, output_fn, ModelOutput, ShapMethod, ShapOptions};
use survkit::matrix::Matrix;
use survkit::models::{fit_model, ForestParams, ModelSpec};
use survkit::synth::{generate_cohort, sparse_linear_spec};
use survkit::Result;

fn random_matrix(seed: u64, n: usize, p: usize) -> Matrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(n, p, (0..n * p).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn opts(method: ShapMethod, budget: usize) -> ShapOptions {
    ShapOptions { method, budget, seed: 3 }
}

fn nonlinear(x: &[f64]) -> Result<f64> {
    Ok((x[0] * x[1]).tanh() + x[2].max(0.0) + 0.3 * x[3] * x[3] * x[4] - x[5].abs() + 0.1 * x.iter().sum::<f64>())
}

#[test]
fn linear_model_closed_form() {
    let w = [0.5, -1.2, 0.0, 2.0, 0.3, -0.7, 1.1, 0.05];
    let f = |x: &[f64]| -> Result<f64> { Ok(1.5 + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()) };
    let bg = random_matrix(1, 30, 8);
    let x = [0.3, -1.0, 2.0, 0.7, -0.2, 1.4, 0.0, -1.9];
    for o in [opts(ShapMethod::Exact, 0), opts(ShapMethod::Sampled, 64), opts(ShapMethod::Sampled, 10_000)] {
        let e = kernel_shap(&f, &x, &bg, &o).unwrap();
        for j in 0..8 {
            let mean = bg.column(j).iter().sum::<f64>() / 30.0;
            assert!((e.phi[j] - w[j] * (x[j] - mean)).abs() < 1e-10, "{o:?} feature {j}");
        }
    }
}

#[test]
fn dummy_feature_gets_zero() {
    let f = |x: &[f64]| -> Result<f64> { Ok((x[0] * x[1]).sin() + x[3].exp()) };
    let bg = random_matrix(2, 20, 5);
    let x = [1.0, -0.5, 3.0, 0.2, -4.0];
    let exact = kernel_shap(&f, &x, &bg, &opts(ShapMethod::Exact, 0)).unwrap();
    assert_eq!(exact.phi[2], 0.0);
    assert_eq!(exact.phi[4], 0.0);
    let sampled = kernel_shap(&f, &x, &bg, &opts(ShapMethod::Sampled, 1 << 5)).unwrap();
    assert!(sampled.phi[2].abs() < 1e-10 && sampled.phi[4].abs() < 1e-10);
}

#[test]
fn exact_equals_full_budget_sampling() {
    let bg = random_matrix(3, 15, 10);
    for seed in 0..5 {
        let x = random_matrix(100 + seed, 1, 10);
        let exact = kernel_shap(&nonlinear, x.row(0), &bg, &opts(ShapMethod::Exact, 0)).unwrap();
        let full = kernel_shap(&nonlinear, x.row(0), &bg, &opts(ShapMethod::Sampled, 1 << 10)).unwrap();
        assert!(exact.exact && !full.exact);
        for (a, b) in exact.phi.iter().zip(&full.phi) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn symmetric_features_share_credit() {
    let f = |x: &[f64]| -> Result<f64> { Ok(x[0] * x[1] + x[2]) };
    let bg = Matrix::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap();
    let e = kernel_shap(&f, &[2.0, 2.0, 1.0], &bg, &opts(ShapMethod::Exact, 0)).unwrap();
    assert!((e.phi[0] - 2.0).abs() < 1e-12 && (e.phi[1] - 2.0).abs() < 1e-12);
    assert!((e.phi[2] - 1.0).abs() < 1e-12);
}

#[test]
fn local_accuracy_on_fitted_models() {
    let (cohort, _) = generate_cohort(&sparse_linear_spec(200, 15, 3, 0.8, 4)).unwrap();
    let (x, _) = cohort.design_matrix();
    let bg = x.select_rows(&(0..25).collect::<Vec<_>>());
    for spec in [ModelSpec::Cox { lambda: 0.1 }, ModelSpec::Est(ForestParams { n_trees: 20, ..Default::default() })] {
        let m = fit_model(&spec, &x, &cohort.outcomes, 0).unwrap();
        for output in [ModelOutput::Probability { horizon: 800.0 }, ModelOutput::Risk] {
            let f = output_fn(&m, output);
            for r in 100..105 {
                let e = kernel_shap(&f, x.row(r), &bg, &ShapOptions { budget: 256, ..Default::default() }).unwrap();
                assert!(!e.exact);
                assert!(e.local_accuracy_residual() < 1e-6);
                assert!((e.prediction - f(x.row(r)).unwrap()).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn sampling_is_seeded() {
    let bg = random_matrix(5, 10, 14);
    let x = random_matrix(6, 1, 14);
    let f = |v: &[f64]| nonlinear(v);
    let a = kernel_shap(&f, x.row(0), &bg, &opts(ShapMethod::Sampled, 200)).unwrap();
    let b = kernel_shap(&f, x.row(0), &bg, &opts(ShapMethod::Sampled, 200)).unwrap();
    assert_eq!(a, b);
}
