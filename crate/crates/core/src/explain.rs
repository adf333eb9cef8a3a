//! Kernel SHAP with marginal (interventional) replacement, plus the derived
//! global, threshold, waterfall and risk-group views.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::lu_solve;
use crate::matrix::Matrix;
use crate::models::SurvivalModel;
use crate::num::{total_cmp, Real};
use crate::survcore::{kaplan_meier, log_rank_test, LogRankResult, SurvivalCurve, SurvivalOutcome};

pub const EXACT_MAX_FEATURES: usize = 12;
pub const DEFAULT_BUDGET: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapMethod {
    /// Exact up to `EXACT_MAX_FEATURES`, sampled above.
    Auto,
    Exact,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapOptions {
    pub method: ShapMethod,
    /// Coalitions evaluated in sampled mode (a pair counts as two).
    pub budget: usize,
    pub seed: u64,
}

impl Default for ShapOptions {
    fn default() -> Self {
        ShapOptions {
            method: ShapMethod::Auto,
            budget: DEFAULT_BUDGET,
            seed: 0,
        }
    }
}

/// What the explained function returns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelOutput {
    /// `1 − S(horizon | x)`.
    Probability { horizon: f64 },
    Risk,
}

pub fn output_fn<'a, T: Real, M: SurvivalModel<T> + ?Sized>(
    model: &'a M,
    output: ModelOutput,
) -> impl Fn(&[T]) -> Result<T> + Sync + 'a {
    move |x: &[T]| match output {
        ModelOutput::Probability { horizon } => Ok(T::one() - model.survival_at(x, T::lit(horizon))?),
        ModelOutput::Risk => model.risk(x),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ShapExplanation<T> {
    /// E[f(X)] over the background rows.
    pub base_value: T,
    pub phi: Vec<T>,
    pub prediction: T,
    /// The explained input, on the model's scale.
    pub x: Vec<T>,
    pub exact: bool,
}

impl<T: Real> ShapExplanation<T> {
    pub fn local_accuracy_residual(&self) -> T {
        (self.base_value + self.phi.iter().copied().sum::<T>() - self.prediction).abs()
    }
}

fn hybrid<T: Real>(x: &[T], b: &[T], present: &[bool], out: &mut Vec<T>) {
    out.clear();
    out.extend(present.iter().enumerate().map(|(i, &p)| if p { x[i] } else { b[i] }));
}

/// v(S): mean of f over background rows with features in S taken from x.
fn coalition_values<T: Real, F>(f: &F, x: &[T], background: &Matrix<T>, masks: &[Vec<bool>]) -> Result<Vec<T>>
where
    F: Fn(&[T]) -> Result<T> + Sync,
{
    let nb = T::from_count(background.n_rows());
    masks
        .par_iter()
        .map(|m| {
            let mut buf = Vec::with_capacity(x.len());
            let mut acc = T::zero();
            for b in background.rows() {
                hybrid(x, b, m, &mut buf);
                acc += f(&buf).map_err(|e| Error::Coalition {
                    coalition: (0..m.len()).filter(|&i| m[i]).collect(),
                    reason: e.to_string(),
                })?;
            }
            Ok(acc / nb)
        })
        .collect()
}

fn mask_of(bits: usize, p: usize) -> Vec<bool> {
    (0..p).map(|i| bits >> i & 1 == 1).collect()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn kernel_shap<T: Real, F>(f: &F, x: &[T], background: &Matrix<T>, opts: &ShapOptions) -> Result<ShapExplanation<T>>
where
    F: Fn(&[T]) -> Result<T> + Sync,
{
    let p = x.len();
    if background.n_rows() == 0 {
        return Err(Error::InvalidArgument("background set is empty".into()));
    }
    if background.n_cols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: background.n_cols(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("explained row has missing or non-finite values".into()));
    }
    if p == 0 {
        let base = coalition_values(f, x, background, &[Vec::new()])?[0];
        return Ok(ShapExplanation { base_value: base, phi: Vec::new(), prediction: base, x: Vec::new(), exact: true });
    }
    let exact = match opts.method {
        ShapMethod::Exact => true,
        ShapMethod::Sampled => false,
        ShapMethod::Auto => p <= EXACT_MAX_FEATURES,
    };
    if exact {
        if p > 24 {
            return Err(Error::InvalidArgument(format!("exact Shapley enumeration over {p} features is infeasible")));
        }
        exact_shap(f, x, background)
    } else {
        sampled_shap(f, x, background, opts)
    }
}

fn exact_shap<T: Real, F>(f: &F, x: &[T], background: &Matrix<T>) -> Result<ShapExplanation<T>>
where
    F: Fn(&[T]) -> Result<T> + Sync,
{
    let p = x.len();
    let n_masks = 1usize << p;
    let masks: Vec<Vec<bool>> = (0..n_masks).map(|b| mask_of(b, p)).collect();
    let v = coalition_values(f, x, background, &masks)?;
    // w(s) = s!(p−s−1)!/p! = 1 / (p · C(p−1, s))
    let w: Vec<T> = (0..p).map(|s| T::lit(1.0 / (p as f64 * binomial(p - 1, s)))).collect();
    let mut phi = vec![T::zero(); p];
    for (i, ph) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for s in 0..n_masks {
            if s & bit == 0 {
                *ph += w[s.count_ones() as usize] * (v[s | bit] - v[s]);
            }
        }
    }
    Ok(ShapExplanation {
        base_value: v[0],
        phi,
        prediction: v[n_masks - 1],
        x: x.to_vec(),
        exact: true,
    })
}

fn sampled_shap<T: Real, F>(f: &F, x: &[T], background: &Matrix<T>, opts: &ShapOptions) -> Result<ShapExplanation<T>>
where
    F: Fn(&[T]) -> Result<T> + Sync,
{
    let p = x.len();
    let ends = coalition_values(f, x, background, &[vec![false; p], vec![true; p]])?;
    let (base, pred) = (ends[0], ends[1]);
    if p == 1 {
        return Ok(ShapExplanation { base_value: base, phi: vec![pred - base], prediction: pred, x: x.to_vec(), exact: false });
    }
    let interior = if p < 63 { (1u64 << p) - 2 } else { u64::MAX };
    let mut weighted: BTreeMap<Vec<bool>, f64> = BTreeMap::new();
    if (opts.budget as u64) >= interior {
        for bits in 1..(1usize << p) - 1 {
            let m = mask_of(bits, p);
            let s = bits.count_ones() as usize;
            let k = (p - 1) as f64 / (binomial(p, s) * (s * (p - s)) as f64);
            weighted.insert(m, k);
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let size_w: Vec<f64> = (1..p).map(|s| 1.0 / (s * (p - s)) as f64).collect();
        let total: f64 = size_w.iter().sum();
        let mut drawn = 0;
        while drawn + 1 < opts.budget.max(2) {
            let u: f64 = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut s = p - 1;
            for (k, w) in size_w.iter().enumerate() {
                acc += w;
                if u < acc {
                    s = k + 1;
                    break;
                }
            }
            let mut m = vec![false; p];
            for i in sample(&mut rng, p, s) {
                m[i] = true;
            }
            let c: Vec<bool> = m.iter().map(|b| !b).collect();
            *weighted.entry(m).or_default() += 1.0;
            *weighted.entry(c).or_default() += 1.0;
            drawn += 2;
        }
    }
    let masks: Vec<Vec<bool>> = weighted.keys().cloned().collect();
    let v = coalition_values(f, x, background, &masks)?;
    // eliminate φ_{p−1} via Σφ = pred − base, then solve the weighted normal equations
    let delta = (pred - base).as_f64();
    let q = p - 1;
    let mut a = vec![0.0; q * q];
    let mut rhs = vec![0.0; q];
    for (m, vm) in masks.iter().zip(&v) {
        let w = weighted[m];
        let zl = f64::from(u8::from(m[q]));
        let y = vm.as_f64() - base.as_f64() - zl * delta;
        let z: Vec<f64> = (0..q).map(|i| f64::from(u8::from(m[i])) - zl).collect();
        for i in 0..q {
            rhs[i] += w * z[i] * y;
            for j in 0..q {
                a[i * q + j] += w * z[i] * z[j];
            }
        }
    }
    let sol = lu_solve(&a, &rhs, q)?;
    let mut phi: Vec<T> = sol.iter().map(|&s| T::lit(s)).collect();
    let last = pred - base - phi.iter().copied().sum::<T>();
    phi.push(last);
    Ok(ShapExplanation {
        base_value: base,
        phi,
        prediction: pred,
        x: x.to_vec(),
        exact: false,
    })
}

/// Row `i` uses seed `opts.seed + i`.
pub fn explain_population<T: Real, F>(
    f: &F,
    rows: &Matrix<T>,
    background: &Matrix<T>,
    opts: &ShapOptions,
) -> Result<Vec<ShapExplanation<T>>>
where
    F: Fn(&[T]) -> Result<T> + Sync,
{
    rows.rows()
        .enumerate()
        .map(|(i, r)| {
            let o = ShapOptions { seed: opts.seed.wrapping_add(i as u64), ..*opts };
            kernel_shap(f, r, background, &o).map_err(|e| e.at_row(i))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_abs_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalImportance {
    /// Descending by mean |φ|; ties by feature name.
    pub features: Vec<FeatureImportance>,
}

pub fn global_importance<T: Real>(explanations: &[ShapExplanation<T>], names: &[String]) -> Result<GlobalImportance> {
    let Some(first) = explanations.first() else {
        return Err(Error::InvalidArgument("no explanations to aggregate".into()));
    };
    if first.phi.len() != names.len() {
        return Err(Error::DimensionMismatch { expected: names.len(), got: first.phi.len() });
    }
    let n = explanations.len() as f64;
    let mut features: Vec<FeatureImportance> = names
        .iter()
        .enumerate()
        .map(|(i, name)| FeatureImportance {
            feature: name.clone(),
            mean_abs_phi: explanations.iter().map(|e| e.phi[i].as_f64().abs()).sum::<f64>() / n,
        })
        .collect();
    features.sort_by(|a, b| b.mean_abs_phi.total_cmp(&a.mean_abs_phi).then_with(|| a.feature.cmp(&b.feature)));
    Ok(GlobalImportance { features })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    RiskIncreasesAbove,
    RiskIncreasesBelow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SignThreshold {
    Crossing { value: f64, direction: Direction },
    NoCrossing,
    /// Non-monotone: no single threshold.
    MultipleCrossings { count: usize },
    TooFewPoints,
}

impl SignThreshold {
    pub fn value(&self) -> Option<f64> {
        match self {
            SignThreshold::Crossing { value, .. } => Some(*value),
            _ => None,
        }
    }
}

pub const THRESHOLD_BINS: usize = 20;

/// Zero crossing of per-bin mean φ over equal-frequency bins of the feature,
/// linearly interpolated between adjacent bin centers (mean feature values).
pub fn sign_change_threshold(values: &[f64], phi: &[f64], bins: usize) -> SignThreshold {
    let n = values.len().min(phi.len());
    if bins < 2 || n < 2 * bins {
        return SignThreshold::TooFewPoints;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let (centers, means): (Vec<f64>, Vec<f64>) = (0..bins)
        .map(|k| {
            let chunk = &idx[k * n / bins..(k + 1) * n / bins];
            let m = chunk.len() as f64;
            (
                chunk.iter().map(|&i| values[i]).sum::<f64>() / m,
                chunk.iter().map(|&i| phi[i]).sum::<f64>() / m,
            )
        })
        .unzip();
    // zero-valued bin means are absorbed into the surrounding sign run
    let signed: Vec<usize> = (0..bins).filter(|&k| means[k] != 0.0).collect();
    let crossings: Vec<(usize, usize)> = signed
        .windows(2)
        .filter(|w| (means[w[0]] > 0.0) != (means[w[1]] > 0.0))
        .map(|w| (w[0], w[1]))
        .collect();
    match crossings.as_slice() {
        [] => SignThreshold::NoCrossing,
        [(a, b)] => {
            let (ma, mb) = (means[*a], means[*b]);
            let value = centers[*a] + (centers[*b] - centers[*a]) * ma / (ma - mb);
            let direction = if mb > 0.0 { Direction::RiskIncreasesAbove } else { Direction::RiskIncreasesBelow };
            SignThreshold::Crossing { value, direction }
        }
        many => SignThreshold::MultipleCrossings { count: many.len() },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfallStep {
    pub feature: String,
    /// Feature value for display, on the original scale where known.
    pub value: f64,
    pub phi: f64,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waterfall {
    pub base_value: f64,
    pub prediction: f64,
    /// Ascending |φ|: the first step starts at the base value.
    pub steps: Vec<WaterfallStep>,
}

pub fn waterfall_data<T: Real>(e: &ShapExplanation<T>, names: &[String], display_values: &[f64]) -> Result<Waterfall> {
    if names.len() != e.phi.len() || display_values.len() != e.phi.len() {
        return Err(Error::DimensionMismatch { expected: e.phi.len(), got: names.len().min(display_values.len()) });
    }
    let mut order: Vec<usize> = (0..e.phi.len()).collect();
    order.sort_by(|&a, &b| total_cmp(&e.phi[a].abs(), &e.phi[b].abs()).then(a.cmp(&b)));
    let mut at = e.base_value.as_f64();
    let steps = order
        .into_iter()
        .map(|i| {
            let phi = e.phi[i].as_f64();
            let step = WaterfallStep {
                feature: names[i].clone(),
                value: display_values[i],
                phi,
                start: at,
                end: at + phi,
            };
            at += phi;
            step
        })
        .collect();
    Ok(Waterfall {
        base_value: e.base_value.as_f64(),
        prediction: e.prediction.as_f64(),
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RiskGroups<T> {
    /// Median of the training risks.
    pub cut: T,
    /// Per eval row: risk strictly above the cut.
    pub high_risk: Vec<bool>,
    pub low_curve: Option<SurvivalCurve<T>>,
    pub high_curve: Option<SurvivalCurve<T>>,
    /// `None` when a group is empty.
    pub log_rank: Option<LogRankResult>,
}

pub fn median<T: Real>(v: &[T]) -> Option<T> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[m] } else { (s[m - 1] + s[m]) * T::half() })
}

pub fn risk_group_analysis<T: Real>(
    train_risks: &[T],
    eval_risks: &[T],
    eval_outcomes: &[SurvivalOutcome<T>],
) -> Result<RiskGroups<T>> {
    let cut = median(train_risks).ok_or_else(|| Error::InvalidArgument("no training risks".into()))?;
    if eval_risks.len() != eval_outcomes.len() {
        return Err(Error::DimensionMismatch { expected: eval_outcomes.len(), got: eval_risks.len() });
    }
    let high_risk: Vec<bool> = eval_risks.iter().map(|&r| r > cut).collect();
    let (hi, lo): (Vec<_>, Vec<_>) = eval_outcomes.iter().zip(&high_risk).partition(|(_, &h)| h);
    let hi: Vec<SurvivalOutcome<T>> = hi.into_iter().map(|(o, _)| *o).collect();
    let lo: Vec<SurvivalOutcome<T>> = lo.into_iter().map(|(o, _)| *o).collect();
    let curve = |g: &[SurvivalOutcome<T>]| (!g.is_empty()).then(|| kaplan_meier(g));
    let log_rank = (!hi.is_empty() && !lo.is_empty()).then(|| log_rank_test(&hi, &lo));
    Ok(RiskGroups {
        cut,
        high_risk,
        low_curve: curve(&lo),
        high_curve: curve(&hi),
        log_rank,
    })
}
