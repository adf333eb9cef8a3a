//! Synthetic cohorts with a known Weibull-Cox generating model.
//!
//! Every feature is driven by a latent standard normal `z`; coefficients and
//! nonlinear terms act on `z` (one unit = one latent standard deviation), so a
//! standard-normal continuous feature carries its coefficient on the raw scale.
//! Categorical features contribute `coef · level_index`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{Cohort, FeatureSpec};
use crate::error::{Error, Result};
use crate::survcore::SurvivalOutcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Marginal {
    Normal { mean: f64, sd: f64 },
    /// `exp(mu + sigma · z)`.
    LogNormal { mu: f64, sigma: f64 },
    /// Level `k` when `z` falls in the k-th slice of the cumulative `probs`.
    Categorical { levels: Vec<String>, probs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthFeature {
    pub name: String,
    pub marginal: Marginal,
    #[serde(default)]
    pub coef: f64,
    #[serde(default)]
    pub missing_rate: f64,
    #[serde(default)]
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

impl SynthFeature {
    pub fn standard(name: impl Into<String>, coef: f64) -> Self {
        SynthFeature {
            name: name.into(),
            marginal: Marginal::Normal { mean: 0.0, sd: 1.0 },
            coef,
            missing_rate: 0.0,
            required: false,
            unit: None,
        }
    }

    pub fn with_missing(mut self, rate: f64) -> Self {
        self.missing_rate = rate;
        self
    }
}

/// Exchangeable correlation `rho` among the latent normals of `features`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationBlock {
    pub features: Vec<usize>,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NonlinearTerm {
    /// `effect · 1[z_feature > cut]`
    Threshold { feature: usize, cut: f64, effect: f64 },
    /// `effect · 1[z_a > cut_a] · 1[z_b > cut_b]`
    ThresholdPair { a: usize, cut_a: f64, b: usize, cut_b: f64, effect: f64 },
    /// `effect · z_a · z_b`
    Product { a: usize, b: usize, effect: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n: usize,
    pub features: Vec<SynthFeature>,
    #[serde(default)]
    pub blocks: Vec<CorrelationBlock>,
    #[serde(default)]
    pub terms: Vec<NonlinearTerm>,
    pub weibull_shape: f64,
    pub weibull_scale: f64,
    /// Target fraction of censored patients.
    pub censoring_target: f64,
    /// Administrative end of follow-up; later times are censored here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTruth {
    pub eta: Vec<f64>,
    pub weibull_shape: f64,
    pub weibull_scale: f64,
    /// Calibrated exponential censoring rate (0 means no random censoring).
    pub censoring_rate: f64,
    pub informative: Vec<String>,
    pub seed: u64,
}

impl OracleTruth {
    pub fn survival(&self, i: usize, t: f64) -> f64 {
        (-(t / self.weibull_scale).powf(self.weibull_shape) * self.eta[i].exp()).exp()
    }
}

impl CohortSpec {
    pub fn p(&self) -> usize {
        self.features.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n == 0 || self.features.is_empty() {
            return bad("cohort spec needs n > 0 and at least one feature".into());
        }
        if !(0.0..1.0).contains(&self.censoring_target) {
            return bad(format!("censoring target {} outside [0, 1)", self.censoring_target));
        }
        if !(self.weibull_shape > 0.0 && self.weibull_scale > 0.0) {
            return bad("Weibull shape and scale must be positive".into());
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0) {
                return bad("horizon must be positive".into());
            }
        }
        let p = self.p();
        for f in &self.features {
            if !(0.0..1.0).contains(&f.missing_rate) {
                return bad(format!("missing rate of {} outside [0, 1)", f.name));
            }
            if let Marginal::Categorical { levels, probs } = &f.marginal {
                if levels.is_empty() || levels.len() != probs.len() {
                    return bad(format!("{}: levels and probs must match", f.name));
                }
                let s: f64 = probs.iter().sum();
                if probs.iter().any(|&q| q < 0.0) || (s - 1.0).abs() > 1e-9 {
                    return bad(format!("{}: probs must be a distribution", f.name));
                }
            }
        }
        let mut seen = vec![false; p];
        for b in &self.blocks {
            if !(0.0..1.0).contains(&b.rho) {
                return bad(format!("block correlation {} outside [0, 1)", b.rho));
            }
            for &j in &b.features {
                if j >= p || seen[j] {
                    return bad(format!("feature {j} out of range or in two blocks"));
                }
                seen[j] = true;
            }
        }
        for t in &self.terms {
            let idx = match *t {
                NonlinearTerm::Threshold { feature, .. } => vec![feature],
                NonlinearTerm::ThresholdPair { a, b, .. } | NonlinearTerm::Product { a, b, .. } => {
                    vec![a, b]
                }
            };
            if idx.iter().any(|&j| j >= p) {
                return bad("nonlinear term references an unknown feature".into());
            }
        }
        Ok(())
    }

    pub fn feature_specs(&self) -> Vec<FeatureSpec> {
        self.features
            .iter()
            .map(|f| {
                let mut s = match &f.marginal {
                    Marginal::Categorical { levels, .. } => {
                        let lv: Vec<&str> = levels.iter().map(String::as_str).collect();
                        FeatureSpec::categorical(f.name.clone(), &lv)
                    }
                    _ => FeatureSpec::continuous(f.name.clone()),
                };
                s.required = f.required;
                s.unit = f.unit.clone();
                s
            })
            .collect()
    }

    /// Names of features that enter η through a coefficient or a nonlinear term.
    pub fn informative(&self) -> Vec<String> {
        let mut used: Vec<bool> = self.features.iter().map(|f| f.coef != 0.0).collect();
        for t in &self.terms {
            match *t {
                NonlinearTerm::Threshold { feature, .. } => used[feature] = true,
                NonlinearTerm::ThresholdPair { a, b, .. } | NonlinearTerm::Product { a, b, .. } => {
                    used[a] = true;
                    used[b] = true;
                }
            }
        }
        self.features
            .iter()
            .zip(used)
            .filter(|(_, u)| *u)
            .map(|(f, _)| f.name.clone())
            .collect()
    }
}

fn linear_predictor(spec: &CohortSpec, z: &[f64], value: &[f64]) -> f64 {
    let mut eta = 0.0;
    for (j, f) in spec.features.iter().enumerate() {
        if f.coef != 0.0 {
            eta += f.coef
                * match f.marginal {
                    Marginal::Categorical { .. } => value[j],
                    _ => z[j],
                };
        }
    }
    for t in &spec.terms {
        eta += match *t {
            NonlinearTerm::Threshold { feature, cut, effect } => {
                if z[feature] > cut { effect } else { 0.0 }
            }
            NonlinearTerm::ThresholdPair { a, cut_a, b, cut_b, effect } => {
                if z[a] > cut_a && z[b] > cut_b { effect } else { 0.0 }
            }
            NonlinearTerm::Product { a, b, effect } => effect * z[a] * z[b],
        };
    }
    eta
}

fn realize(marginal: &Marginal, z: f64, std_normal: &Normal) -> f64 {
    match marginal {
        Marginal::Normal { mean, sd } => mean + sd * z,
        Marginal::LogNormal { mu, sigma } => (mu + sigma * z).exp(),
        Marginal::Categorical { probs, .. } => {
            let u = std_normal.cdf(z);
            let mut acc = 0.0;
            for (k, q) in probs.iter().enumerate() {
                acc += q;
                if u < acc {
                    return k as f64;
                }
            }
            (probs.len() - 1) as f64
        }
    }
}

/// Draws the cohort and its ground truth. Identical spec ⇒ bit-identical output.
pub fn generate_cohort(spec: &CohortSpec) -> Result<(Cohort, OracleTruth)> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut block_of = vec![None; p];
    for (b, blk) in spec.blocks.iter().enumerate() {
        for &j in &blk.features {
            block_of[j] = Some(b);
        }
    }

    let mut z = vec![0.0; n * p];
    let mut shared = vec![0.0; spec.blocks.len()];
    for i in 0..n {
        for s in shared.iter_mut() {
            *s = rng.sample(StandardNormal);
        }
        for j in 0..p {
            let e: f64 = rng.sample(StandardNormal);
            z[i * p + j] = match block_of[j] {
                Some(b) => {
                    let rho = spec.blocks[b].rho;
                    rho.sqrt() * shared[b] + (1.0 - rho).sqrt() * e
                }
                None => e,
            };
        }
    }
    let values: Vec<f64> = (0..n * p)
        .map(|k| realize(&spec.features[k % p].marginal, z[k], &std_normal))
        .collect();
    let eta: Vec<f64> = (0..n)
        .map(|i| linear_predictor(spec, &z[i * p..(i + 1) * p], &values[i * p..(i + 1) * p]))
        .collect();

    let (k, lambda) = (spec.weibull_shape, spec.weibull_scale);
    let event_time: Vec<f64> = eta
        .iter()
        .map(|&e| {
            let u: f64 = 1.0 - rng.random::<f64>();
            lambda * (-u.ln() / e.exp()).powf(1.0 / k)
        })
        .collect();
    let exp_draw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();

    let rate = calibrate_censoring(&event_time, &exp_draw, spec.horizon, spec.censoring_target)?;
    let outcomes: Vec<SurvivalOutcome<f64>> = (0..n)
        .map(|i| {
            let c = if rate > 0.0 { exp_draw[i] / rate } else { f64::INFINITY };
            let c = spec.horizon.map_or(c, |h| c.min(h));
            let t = event_time[i];
            if t <= c {
                SurvivalOutcome::death(t)
            } else {
                SurvivalOutcome::censored(c)
            }
        })
        .collect();

    let mut missing = vec![false; n * p];
    let mut order: Vec<usize> = (0..n).collect();
    for (j, f) in spec.features.iter().enumerate() {
        let m = (f.missing_rate * n as f64).round() as usize;
        if m == 0 {
            continue;
        }
        order.shuffle(&mut rng);
        for &i in &order[..m] {
            missing[i * p + j] = true;
        }
    }

    let rows: Vec<Vec<Option<f64>>> = (0..n)
        .map(|i| {
            (0..p)
                .map(|j| (!missing[i * p + j]).then_some(values[i * p + j]))
                .collect()
        })
        .collect();
    let cohort = Cohort::new(spec.feature_specs(), rows, outcomes)?;
    let truth = OracleTruth {
        eta,
        weibull_shape: k,
        weibull_scale: lambda,
        censoring_rate: rate,
        informative: spec.informative(),
        seed: spec.seed,
    };
    Ok((cohort, truth))
}

/// Exponential censoring rate whose realized censored count on these draws is
/// `round(target · n)`. Patient i is randomly censored iff `rate > e_i / t_i`,
/// so the count is a step function of the rate and the root is bracketed by
/// two adjacent order statistics of those ratios.
fn calibrate_censoring(t: &[f64], e: &[f64], horizon: Option<f64>, target: f64) -> Result<f64> {
    let n = t.len();
    let admin = horizon.map_or(0, |h| t.iter().filter(|&&x| x > h).count());
    let want = (target * n as f64).round() as usize;
    let min = admin as f64 / n as f64;
    if want < admin {
        return Err(Error::UnattainableCensoring { target, min, max: 1.0 });
    }
    let mut ratios: Vec<f64> = t
        .iter()
        .zip(e)
        .filter(|(&ti, _)| horizon.is_none_or(|h| ti <= h))
        .map(|(&ti, &ei)| ei / ti)
        .collect();
    ratios.sort_by(f64::total_cmp);
    let extra = want - admin;
    if extra == 0 {
        return Ok(0.0);
    }
    if extra >= ratios.len() {
        return Err(Error::UnattainableCensoring {
            target,
            min,
            max: (n - 1) as f64 / n as f64,
        });
    }
    // need exactly `extra` ratios strictly below the rate
    let lo = ratios[extra - 1];
    let hi = ratios[extra];
    Ok(if hi > lo { (lo * hi).sqrt().clamp(lo.next_up(), hi) } else { hi })
}

/// The best achievable risk ranking under the generating model.
pub fn oracle_risk(truth: &OracleTruth, i: usize) -> Result<f64> {
    truth
        .eta
        .get(i)
        .copied()
        .ok_or_else(|| Error::InvalidArgument(format!("patient index {i} out of range")))
}

pub const STUDY_HORIZON_DAYS: f64 = 6142.0;

/// Preset mirroring the target cohort's dimensions: 554 patients, 123 features,
/// about 36% deaths, 6142-day follow-up, 10 informative features and one
/// planted 30%-missing feature.
pub fn paper_shaped_spec(seed: u64) -> CohortSpec {
    let cont = |name: &str, mean: f64, sd: f64, coef: f64| SynthFeature {
        name: name.into(),
        marginal: Marginal::Normal { mean, sd },
        coef,
        missing_rate: 0.0,
        required: false,
        unit: None,
    };
    let logn = |name: &str, mu: f64, sigma: f64, coef: f64| SynthFeature {
        name: name.into(),
        marginal: Marginal::LogNormal { mu, sigma },
        coef,
        missing_rate: 0.0,
        required: false,
        unit: None,
    };
    let cat = |name: &str, levels: &[&str], probs: &[f64], coef: f64| SynthFeature {
        name: name.into(),
        marginal: Marginal::Categorical {
            levels: levels.iter().map(|s| s.to_string()).collect(),
            probs: probs.to_vec(),
        },
        coef,
        missing_rate: 0.0,
        required: false,
        unit: None,
    };

    let mut f = vec![
        SynthFeature { required: true, unit: Some("years".into()), ..cont("age", 62.0, 11.0, 0.55) },
        SynthFeature { required: true, ..cat("sex", &["female", "male"], &[0.3, 0.7], 0.2) },
        SynthFeature { unit: Some("%".into()), ..logn("hba1c", 1.8, 0.12, 0.45) },
        SynthFeature { unit: Some("mg/L".into()), ..logn("hs_crp", 0.7, 0.9, 0.4) },
        SynthFeature { unit: Some("ng/mL".into()), ..logn("sst2", 3.2, 0.45, 0.5) },
        SynthFeature { unit: Some("pg/mL".into()), ..logn("nt_probnp", 5.5, 1.1, 0.5) },
        SynthFeature { unit: Some("mL/min".into()), ..cont("egfr", 80.0, 20.0, -0.35) },
        SynthFeature { unit: Some("%".into()), ..cont("lvef", 58.0, 9.0, -0.3) },
        cat("diabetes", &["no", "yes"], &[0.7, 0.3], 0.35),
        cat("smoking", &["never", "former", "current"], &[0.45, 0.35, 0.2], 0.15),
    ];
    for i in 0..93 {
        f.push(match i % 3 {
            0 => logn(&format!("lab_{i:03}"), 1.0, 0.5, 0.0),
            _ => cont(&format!("lab_{i:03}"), 10.0, 3.0, 0.0),
        });
    }
    for i in 0..19 {
        f.push(cat(&format!("hist_{i:02}"), &["no", "yes"], &[0.8, 0.2], 0.0));
    }
    f.push(logn("planted_sparse", 2.0, 0.6, 0.0).with_missing(0.30));
    debug_assert_eq!(f.len(), 123);
    // light MCAR missingness on a subset of continuous labs, well under 20%
    for (j, feat) in f.iter_mut().enumerate() {
        if j >= 2 && j < 113 && j % 4 == 0 && !matches!(feat.marginal, Marginal::Categorical { .. }) {
            feat.missing_rate = 0.02 + 0.01 * ((j / 4) % 5) as f64;
        }
    }
    CohortSpec {
        n: 554,
        features: f,
        blocks: vec![
            CorrelationBlock { features: vec![2, 8, 10, 11], rho: 0.4 },
            CorrelationBlock { features: vec![4, 5, 7, 12, 13], rho: 0.3 },
            CorrelationBlock { features: (20..30).collect(), rho: 0.5 },
        ],
        terms: vec![NonlinearTerm::Threshold { feature: 6, cut: -1.0, effect: 0.5 }],
        weibull_shape: 1.3,
        weibull_scale: 9000.0,
        censoring_target: 1.0 - 202.0 / 554.0,
        horizon: Some(STUDY_HORIZON_DAYS),
        seed,
    }
}

/// `p` standard-normal features, `informative` of which carry coefficient
/// `effect` (features 0..informative); no missingness.
pub fn sparse_linear_spec(n: usize, p: usize, informative: usize, effect: f64, seed: u64) -> CohortSpec {
    CohortSpec {
        n,
        features: (0..p)
            .map(|j| SynthFeature::standard(format!("x{j:03}"), if j < informative { effect } else { 0.0 }))
            .collect(),
        blocks: Vec::new(),
        terms: Vec::new(),
        weibull_shape: 1.5,
        weibull_scale: 1000.0,
        censoring_target: 0.3,
        horizon: None,
        seed,
    }
}

/// Risk driven only by threshold and interaction structure that a linear
/// predictor cannot represent: a U-shape in x0, a joint-threshold pair on
/// (x1, x2) and a product of (x3, x4).
pub fn threshold_interaction_spec(n: usize, p: usize, seed: u64) -> CohortSpec {
    assert!(p >= 5, "threshold_interaction_spec needs at least 5 features");
    CohortSpec {
        n,
        features: (0..p).map(|j| SynthFeature::standard(format!("x{j:02}"), 0.0)).collect(),
        blocks: Vec::new(),
        terms: vec![
            NonlinearTerm::Threshold { feature: 0, cut: 0.8, effect: 1.5 },
            NonlinearTerm::Threshold { feature: 0, cut: -0.8, effect: -1.5 },
            NonlinearTerm::ThresholdPair { a: 1, cut_a: 0.0, b: 2, cut_b: 0.0, effect: 1.5 },
            NonlinearTerm::Product { a: 3, b: 4, effect: 0.8 },
        ],
        weibull_shape: 1.5,
        weibull_scale: 1000.0,
        censoring_target: 0.3,
        horizon: None,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::harrell_cindex;

    #[test]
    fn zero_censoring_means_all_events() {
        let mut s = sparse_linear_spec(300, 3, 1, 1.0, 4);
        s.censoring_target = 0.0;
        let (c, truth) = generate_cohort(&s).unwrap();
        assert!(c.outcomes.iter().all(|o| o.event));
        assert_eq!(truth.censoring_rate, 0.0);
    }

    #[test]
    fn censoring_hits_target_count() {
        for target in [0.1, 0.36, 0.64, 0.9] {
            let mut s = sparse_linear_spec(1000, 3, 2, 0.7, 11);
            s.censoring_target = target;
            let (c, _) = generate_cohort(&s).unwrap();
            let censored = c.outcomes.iter().filter(|o| !o.event).count();
            assert_eq!(censored, (target * 1000.0).round() as usize, "target {target}");
        }
    }

    #[test]
    fn unattainable_censoring_reports_bound() {
        let mut s = sparse_linear_spec(200, 2, 1, 0.5, 1);
        s.horizon = Some(1.0);
        s.censoring_target = 0.1;
        match generate_cohort(&s) {
            Err(Error::UnattainableCensoring { min, .. }) => assert!(min > 0.9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missingness_rate_is_exact() {
        let mut s = sparse_linear_spec(10_000, 2, 1, 0.5, 3);
        s.features[1].missing_rate = 0.3;
        let (c, _) = generate_cohort(&s).unwrap();
        assert_eq!(c.missing_count(1), 3000);
        assert_eq!(c.missing_count(0), 0);
    }

    #[test]
    fn null_truth_gives_chance_oracle() {
        let (c, truth) = generate_cohort(&sparse_linear_spec(2000, 4, 0, 0.0, 8)).unwrap();
        let ci = harrell_cindex(&truth.eta, &c.outcomes).unwrap().c_index;
        // η ≡ 0: every comparable pair is a risk tie
        assert!((ci - 0.5).abs() <= 0.02);
    }

    #[test]
    fn risk_follows_single_feature() {
        let (c, truth) = generate_cohort(&sparse_linear_spec(50, 3, 1, 1.0, 2)).unwrap();
        let mut by_x: Vec<usize> = (0..50).collect();
        by_x.sort_by(|&a, &b| c.value(a, 0).unwrap().total_cmp(&c.value(b, 0).unwrap()));
        let mut by_eta: Vec<usize> = (0..50).collect();
        by_eta.sort_by(|&a, &b| truth.eta[a].total_cmp(&truth.eta[b]));
        assert_eq!(by_x, by_eta);
        assert_eq!(oracle_risk(&truth, 3).unwrap(), truth.eta[3]);
        assert!(oracle_risk(&truth, 50).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let s = paper_shaped_spec(5);
        let a = generate_cohort(&s).unwrap();
        let b = generate_cohort(&s).unwrap();
        assert_eq!(a, b);
        let c = generate_cohort(&paper_shaped_spec(6)).unwrap();
        assert_ne!(a.1.eta, c.1.eta);
    }

    #[test]
    fn default_preset_dimensions() {
        let (c, truth) = generate_cohort(&paper_shaped_spec(0)).unwrap();
        assert_eq!(c.n_rows(), 554);
        assert_eq!(c.n_features(), 123);
        assert_eq!(c.n_events(), 202);
        assert_eq!(truth.informative.len(), 10);
        let over: Vec<usize> = (0..123).filter(|&j| c.missing_count(j) as f64 / 554.0 > 0.2).collect();
        assert_eq!(over, vec![c.feature_index("planted_sparse").unwrap()]);
        assert!(c.outcomes.iter().all(|o| o.time <= STUDY_HORIZON_DAYS));
        for name in ["hba1c", "hs_crp", "sst2"] {
            assert!(truth.informative.contains(&name.to_string()));
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = sparse_linear_spec(10, 2, 1, 1.0, 0);
        s.censoring_target = 1.0;
        assert!(generate_cohort(&s).is_err());
        let mut s = sparse_linear_spec(10, 2, 1, 1.0, 0);
        s.features[0].missing_rate = 1.0;
        assert!(generate_cohort(&s).is_err());
        let mut s = sparse_linear_spec(10, 2, 1, 1.0, 0);
        s.blocks.push(CorrelationBlock { features: vec![0, 5], rho: 0.2 });
        assert!(generate_cohort(&s).is_err());
    }
}
