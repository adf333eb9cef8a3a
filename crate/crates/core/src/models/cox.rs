//! Ridge-penalized Cox proportional hazards, fitted by Newton-Raphson on the
//! Breslow partial likelihood.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, lu_solve, spd_inverse};
use crate::matrix::Matrix;
use crate::num::{total_cmp, Real};
use crate::survcore::{StepFunction, SurvivalCurve, SurvivalOutcome};

#[derive(Debug, Clone, Copy)]
pub struct CoxOptions<T> {
    /// Convergence threshold on the gradient inf-norm.
    pub tol: T,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl<T: Real> Default for CoxOptions<T> {
    fn default() -> Self {
        CoxOptions {
            tol: T::lit(1e-8),
            max_iter: 100,
            max_halvings: 20,
        }
    }
}

/// Penalized partial log-likelihood `l(β) - λ‖β‖²` with Breslow ties.
pub struct CoxObjective<'a, T> {
    x: &'a Matrix<T>,
    outcomes: &'a [SurvivalOutcome<T>],
    lambda: T,
    /// Row indices by time descending.
    order: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CoxEvaluation<T> {
    pub value: T,
    pub gradient: Vec<T>,
    /// Row-major p×p Hessian.
    pub hessian: Vec<T>,
}

impl<'a, T: Real> CoxObjective<'a, T> {
    pub fn new(x: &'a Matrix<T>, outcomes: &'a [SurvivalOutcome<T>], lambda: T) -> Result<Self> {
        if x.n_rows() != outcomes.len() {
            return Err(Error::DimensionMismatch {
                expected: x.n_rows(),
                got: outcomes.len(),
            });
        }
        let mut order: Vec<usize> = (0..outcomes.len()).collect();
        order.sort_by(|&a, &b| total_cmp(&outcomes[b].time, &outcomes[a].time).then(a.cmp(&b)));
        Ok(CoxObjective {
            x,
            outcomes,
            lambda,
            order,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.n_cols()
    }

    fn linear_predictor(&self, beta: &[T]) -> Vec<T> {
        self.x
            .rows()
            .map(|r| r.iter().zip(beta).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    pub fn value(&self, beta: &[T]) -> T {
        self.evaluate_impl(beta, false).value
    }

    pub fn evaluate(&self, beta: &[T]) -> CoxEvaluation<T> {
        self.evaluate_impl(beta, true)
    }

    fn evaluate_impl(&self, beta: &[T], derivatives: bool) -> CoxEvaluation<T> {
        let p = self.dim();
        let eta = self.linear_predictor(beta);
        let shift = eta.iter().copied().fold(T::neg_infinity(), T::max);
        let shift = if shift.is_finite() { shift } else { T::zero() };

        let mut s0 = T::zero();
        let mut s1 = vec![T::zero(); p];
        let mut s2 = vec![T::zero(); if derivatives { p * p } else { 0 }];
        let mut value = T::zero();
        let mut grad = vec![T::zero(); p];
        let mut hess = vec![T::zero(); if derivatives { p * p } else { 0 }];

        let n = self.order.len();
        let mut i = 0;
        while i < n {
            let t = self.outcomes[self.order[i]].time;
            let start = i;
            while i < n && self.outcomes[self.order[i]].time == t {
                let r = self.order[i];
                let w = (eta[r] - shift).exp();
                s0 += w;
                let xr = self.x.row(r);
                for a in 0..p {
                    s1[a] += w * xr[a];
                    if derivatives {
                        for b in 0..p {
                            s2[a * p + b] += w * xr[a] * xr[b];
                        }
                    }
                }
                i += 1;
            }
            let mut deaths = T::zero();
            for &r in &self.order[start..i] {
                if self.outcomes[r].event {
                    deaths += T::one();
                    value += eta[r];
                    if derivatives {
                        for a in 0..p {
                            grad[a] += self.x.get(r, a);
                        }
                    }
                }
            }
            if deaths > T::zero() {
                value -= deaths * (s0.ln() + shift);
                if derivatives {
                    for a in 0..p {
                        let ma = s1[a] / s0;
                        grad[a] -= deaths * ma;
                        for b in 0..p {
                            let mb = s1[b] / s0;
                            hess[a * p + b] -= deaths * (s2[a * p + b] / s0 - ma * mb);
                        }
                    }
                }
            }
        }

        let two = T::two();
        value -= self.lambda * beta.iter().map(|&b| b * b).sum::<T>();
        if derivatives {
            for a in 0..p {
                grad[a] -= two * self.lambda * beta[a];
                hess[a * p + a] -= two * self.lambda;
            }
        }
        CoxEvaluation {
            value,
            gradient: grad,
            hessian: hess,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CoxRidgeModel<T> {
    pub coefficients: Vec<T>,
    pub lambda: T,
    /// Breslow baseline cumulative hazard.
    pub baseline_hazard: StepFunction<T>,
    pub features: Vec<String>,
    /// Standard errors from the inverse penalized information at the optimum.
    pub std_errors: Vec<T>,
    pub iterations: usize,
}

fn inf_norm<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

pub fn fit_cox_ridge<T: Real>(
    x: &Matrix<T>,
    outcomes: &[SurvivalOutcome<T>],
    lambda: T,
) -> Result<CoxRidgeModel<T>> {
    fit_cox_ridge_with(x, outcomes, lambda, &CoxOptions::default())
}

pub fn fit_cox_ridge_with<T: Real>(
    x: &Matrix<T>,
    outcomes: &[SurvivalOutcome<T>],
    lambda: T,
    opts: &CoxOptions<T>,
) -> Result<CoxRidgeModel<T>> {
    if outcomes.len() < 2 || !outcomes.iter().any(|o| o.event) {
        return Err(Error::Degenerate(
            "Cox fit needs at least two rows and one event".into(),
        ));
    }
    if lambda < T::zero() || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("ridge strength {lambda} must be >= 0")));
    }
    let obj = CoxObjective::new(x, outcomes, lambda)?;
    let p = obj.dim();
    let mut beta = vec![T::zero(); p];
    let mut ev = obj.evaluate(&beta);
    let mut iterations = 0;
    loop {
        let gnorm = inf_norm(&ev.gradient);
        if gnorm < opts.tol {
            break;
        }
        if iterations >= opts.max_iter || !gnorm.is_finite() {
            return Err(Error::NonConvergence {
                iterations,
                grad_norm: gnorm.as_f64(),
                last_iterate: beta.iter().map(|b| b.as_f64()).collect(),
            });
        }
        iterations += 1;
        let neg_h: Vec<T> = ev.hessian.iter().map(|&h| -h).collect();
        let step = cholesky_solve(&neg_h, &ev.gradient, p)
            .or_else(|_| lu_solve(&neg_h, &ev.gradient, p))?;
        let mut scale = T::one();
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand: Vec<T> = beta.iter().zip(&step).map(|(&b, &s)| b + scale * s).collect();
            let v = obj.value(&cand);
            if v.is_finite() && v >= ev.value {
                accepted = Some(cand);
                break;
            }
            scale *= T::half();
        }
        match accepted {
            Some(b) => {
                beta = b;
                ev = obj.evaluate(&beta);
            }
            None => {
                // No ascent along the Newton direction: at the optimum up to rounding.
                let gnorm = inf_norm(&ev.gradient);
                if gnorm < opts.tol.sqrt() {
                    break;
                }
                return Err(Error::NonConvergence {
                    iterations,
                    grad_norm: gnorm.as_f64(),
                    last_iterate: beta.iter().map(|b| b.as_f64()).collect(),
                });
            }
        }
    }

    let neg_h: Vec<T> = ev.hessian.iter().map(|&h| -h).collect();
    let std_errors = match spd_inverse(&neg_h, p) {
        Ok(inv) => (0..p).map(|i| inv[i * p + i].max(T::zero()).sqrt()).collect(),
        Err(_) => vec![T::nan(); p],
    };
    let baseline_hazard = breslow_baseline(x, outcomes, &beta);
    Ok(CoxRidgeModel {
        coefficients: beta,
        lambda,
        baseline_hazard,
        features: (0..p).map(|i| format!("x{i}")).collect(),
        std_errors,
        iterations,
    })
}

/// Breslow estimate `H₀(t) = Σ_{t_i ≤ t} d_i / Σ_{j ∈ R(t_i)} exp(βᵀx_j)`.
pub fn breslow_baseline<T: Real>(
    x: &Matrix<T>,
    outcomes: &[SurvivalOutcome<T>],
    beta: &[T],
) -> StepFunction<T> {
    let mut order: Vec<usize> = (0..outcomes.len()).collect();
    order.sort_by(|&a, &b| total_cmp(&outcomes[b].time, &outcomes[a].time));
    let mut risk_sum = T::zero();
    let mut jumps: Vec<(T, T)> = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let t = outcomes[order[i]].time;
        let mut deaths = T::zero();
        while i < order.len() && outcomes[order[i]].time == t {
            let r = order[i];
            let eta: T = x.row(r).iter().zip(beta).map(|(&a, &b)| a * b).sum();
            risk_sum += eta.exp();
            if outcomes[r].event {
                deaths += T::one();
            }
            i += 1;
        }
        if deaths > T::zero() {
            jumps.push((t, deaths / risk_sum));
        }
    }
    jumps.reverse();
    let mut h = T::zero();
    let (bps, vals): (Vec<T>, Vec<T>) = jumps
        .into_iter()
        .map(|(t, j)| {
            h += j;
            (t, h)
        })
        .unzip();
    StepFunction::new(bps, vals, T::zero())
}

impl<T: Real> CoxRidgeModel<T> {
    pub fn with_features(mut self, names: Vec<String>) -> Self {
        self.features = names;
        self
    }

    pub fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    pub fn linear_predictor(&self, x: &[T]) -> Result<T> {
        if x.len() != self.coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coefficients.len(),
                got: x.len(),
            });
        }
        Ok(x.iter().zip(&self.coefficients).map(|(&a, &b)| a * b).sum())
    }

    /// Risk score `βᵀx` and survival `exp(-H₀(t)·exp(βᵀx))`.
    pub fn predict(&self, x: &[T]) -> Result<(T, SurvivalCurve<T>)> {
        let lp = self.linear_predictor(x)?;
        let m = lp.exp();
        let curve = SurvivalCurve::from_step(
            self.baseline_hazard.map(|h| (-(h * m)).exp()),
        );
        Ok((lp, curve))
    }

    pub fn survival_at(&self, x: &[T], t: T) -> Result<T> {
        let lp = self.linear_predictor(x)?;
        Ok((-(self.baseline_hazard.eval(t) * lp.exp())).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Matrix<f64>, Vec<SurvivalOutcome<f64>>) {
        let x = Matrix::from_rows(&[vec![1.0], vec![0.0], vec![1.0], vec![0.0]]).unwrap();
        let y = vec![
            SurvivalOutcome::death(1.0),
            SurvivalOutcome::death(2.0),
            SurvivalOutcome::death(3.0),
            SurvivalOutcome::censored(4.0),
        ];
        (x, y)
    }

    /// Score equation for the 4-patient toy written out by hand:
    /// risk sets {1,2,3,4}, {2,3,4}, {3,4} with x = 1,0,1,0.
    fn hand_score(b: f64) -> f64 {
        let e = b.exp();
        (1.0 - 2.0 * e / (2.0 * e + 2.0)) + (0.0 - e / (e + 2.0)) + (1.0 - e / (e + 1.0))
    }

    #[test]
    fn one_covariate_matches_brute_force_score_root() {
        // 1-D grid search for the sign change of the score, refined to 1e-7.
        let (mut lo, mut hi) = (-10.0, 10.0);
        let mut step = 0.5;
        let mut root = f64::NAN;
        while step > 1e-7 {
            let mut b = lo;
            while b < hi {
                if hand_score(b) >= 0.0 && hand_score(b + step) < 0.0 {
                    lo = b;
                    hi = b + step;
                    root = b;
                    break;
                }
                b += step;
            }
            step /= 10.0;
        }
        let (x, y) = toy();
        let m = fit_cox_ridge(&x, &y, 0.0).unwrap();
        assert!((m.coefficients[0] - root).abs() < 1e-6, "{} vs {root}", m.coefficients[0]);
    }

    #[test]
    fn huge_penalty_shrinks_to_zero() {
        let (x, y) = toy();
        let m = fit_cox_ridge(&x, &y, 1e9).unwrap();
        assert!(m.coefficients[0].abs() < 1e-4);
    }

    #[test]
    fn zero_coefficients_share_one_curve() {
        let (x, y) = toy();
        let m = fit_cox_ridge(&x, &y, 1e9).unwrap();
        let mut m = m;
        m.coefficients = vec![0.0];
        let (r0, c0) = m.predict(&[0.0]).unwrap();
        let (_, c1) = m.predict(&[1.0]).unwrap();
        assert_eq!(r0, 0.0);
        assert_eq!(c0, c1);
        let expected = m.baseline_hazard.map(|h| (-h).exp());
        assert_eq!(c0.step, expected);
    }

    #[test]
    fn higher_linear_predictor_lowers_curve() {
        let (x, y) = toy();
        let m = fit_cox_ridge(&x, &y, 0.01).unwrap();
        let b = m.coefficients[0];
        let (lo, hi) = if b > 0.0 { (0.0, 1.0) } else { (1.0, 0.0) };
        let (_, s_lo) = m.predict(&[lo]).unwrap();
        let (_, s_hi) = m.predict(&[hi]).unwrap();
        for (a, b) in s_lo.step.values().iter().zip(s_hi.step.values()) {
            assert!(b <= a);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let (x, y) = toy();
        let m = fit_cox_ridge(&x, &y, 0.1).unwrap();
        assert!(matches!(m.predict(&[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn needs_an_event() {
        let x = Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let y = vec![SurvivalOutcome::censored(1.0), SurvivalOutcome::censored(2.0)];
        assert!(fit_cox_ridge(&x, &y, 0.1).is_err());
    }

    #[test]
    fn separation_without_penalty_does_not_converge() {
        // x perfectly orders deaths: the unpenalized MLE runs off to infinity.
        let x = Matrix::from_rows(&[vec![3.0], vec![2.0], vec![1.0]]).unwrap();
        let y = vec![
            SurvivalOutcome::death(1.0),
            SurvivalOutcome::death(2.0),
            SurvivalOutcome::death(3.0),
        ];
        let opts = CoxOptions {
            max_iter: 15,
            ..CoxOptions::default()
        };
        match fit_cox_ridge_with(&x, &y, 0.0, &opts) {
            Err(Error::NonConvergence { last_iterate, .. }) => assert!(last_iterate[0] > 1.0),
            other => panic!("expected non-convergence, got {other:?}"),
        }
        assert!(fit_cox_ridge(&x, &y, 0.1).is_ok());
    }
}
