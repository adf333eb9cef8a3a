//! Tree-structured Parzen estimator over stratified k-fold CV.
//!
//! The Parzen estimators are per-dimension (independent); this approximates
//! a multivariate TPE. Each trial draws from its own RNG stream, so a run
//! resumed from a log proposes exactly what an uninterrupted run would.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Cohort;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::harrell_cindex;
use crate::models::{fit_model, ForestParams, ModelKind, ModelSpec, SurvivalModel};
use crate::survcore::SurvivalOutcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Dimension {
    Int { name: String, low: i64, high: i64 },
    Real { name: String, low: f64, high: f64, log: bool },
    Categorical { name: String, choices: Vec<String> },
}

impl Dimension {
    pub fn name(&self) -> &str {
        match self {
            Dimension::Int { name, .. } | Dimension::Real { name, .. } | Dimension::Categorical { name, .. } => name,
        }
    }

    pub fn contains(&self, v: &ParamValue) -> bool {
        match (self, v) {
            (Dimension::Int { low, high, .. }, ParamValue::Int(x)) => low <= x && x <= high,
            (Dimension::Real { low, high, .. }, ParamValue::Real(x)) => low <= x && x <= high,
            (Dimension::Categorical { choices, .. }, ParamValue::Cat(c)) => choices.contains(c),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
    Cat(String),
}

impl ParamValue {
    pub fn as_i64(&self) -> Option<i64> {
        match self {
            ParamValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Real(v) => Some(*v),
            ParamValue::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Cat(s) => Some(s),
            _ => None,
        }
    }
}

pub type Config = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        let s = SearchSpace { dims };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let mut names: Vec<&str> = self.dims.iter().map(Dimension::name).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate dimension name".into());
        }
        for d in &self.dims {
            match d {
                Dimension::Int { name, low, high } if low > high => {
                    return bad(format!("{name}: empty integer range"))
                }
                Dimension::Real { name, low, high, log } => {
                    if !(low <= high) || !low.is_finite() || !high.is_finite() {
                        return bad(format!("{name}: empty real range"));
                    }
                    if *log && *low <= 0.0 {
                        return bad(format!("{name}: log range must be positive"));
                    }
                }
                Dimension::Categorical { name, choices } if choices.is_empty() => {
                    return bad(format!("{name}: no choices"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn contains(&self, c: &Config) -> bool {
        c.len() == self.dims.len()
            && self.dims.iter().all(|d| c.get(d.name()).is_some_and(|v| d.contains(v)))
    }
}

/// Search space for a model family; `p` is the number of design columns.
pub fn model_search_space(kind: ModelKind, p: usize) -> SearchSpace {
    let dims = match kind {
        ModelKind::Cox => vec![Dimension::Real {
            name: "lambda".into(),
            low: 1e-4,
            high: 1e2,
            log: true,
        }],
        ModelKind::Rsf | ModelKind::Est => vec![
            Dimension::Int { name: "n_trees".into(), low: 50, high: 500 },
            Dimension::Int { name: "min_leaf_size".into(), low: 5, high: 50 },
            Dimension::Categorical {
                name: "max_depth_mode".into(),
                choices: vec!["unbounded".into(), "limited".into()],
            },
            Dimension::Int { name: "max_depth".into(), low: 5, high: 30 },
            Dimension::Int {
                name: "features_per_split".into(),
                low: 2.min(p.max(1)) as i64,
                high: p.max(1) as i64,
            },
        ],
    };
    SearchSpace { dims }
}

/// Maps a configuration from `model_search_space(kind, _)` to a model spec.
pub fn config_to_spec(kind: ModelKind, c: &Config) -> Result<ModelSpec> {
    let get = |k: &str| {
        c.get(k)
            .ok_or_else(|| Error::InvalidArgument(format!("configuration lacks {k}")))
    };
    let int = |k: &str| -> Result<usize> {
        get(k)?
            .as_i64()
            .filter(|&v| v >= 0)
            .map(|v| v as usize)
            .ok_or_else(|| Error::InvalidArgument(format!("{k} must be a non-negative integer")))
    };
    Ok(match kind {
        ModelKind::Cox => ModelSpec::Cox {
            lambda: get("lambda")?
                .as_f64()
                .ok_or_else(|| Error::InvalidArgument("lambda must be real".into()))?,
        },
        ModelKind::Rsf | ModelKind::Est => {
            let limited = get("max_depth_mode")?.as_str() == Some("limited");
            let params = ForestParams {
                n_trees: int("n_trees")?,
                min_leaf_size: int("min_leaf_size")?,
                max_depth: if limited { Some(int("max_depth")?) } else { None },
                features_per_split: Some(int("features_per_split")?),
                bootstrap: None,
            };
            if kind == ModelKind::Rsf { ModelSpec::Rsf(params) } else { ModelSpec::Est(params) }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub folds: Vec<Vec<usize>>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Sorted complement of fold `f`.
    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        v.sort_unstable();
        v
    }
}

/// Events are shuffled and dealt round-robin; censored rows are shuffled and
/// dealt continuing the same rotation, so fold sizes and event counts each
/// differ by at most one.
pub fn stratified_kfold(events: &[bool], k: usize, seed: u64) -> Result<FoldAssignment> {
    let mut ev: Vec<usize> = (0..events.len()).filter(|&i| events[i]).collect();
    let mut cens: Vec<usize> = (0..events.len()).filter(|&i| !events[i]).collect();
    if k < 2 || k > ev.len().min(cens.len()) {
        return Err(Error::InvalidArgument(format!(
            "k = {k} needs 2 <= k <= min(events {}, censored {})",
            ev.len(),
            cens.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ev.shuffle(&mut rng);
    cens.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (pos, &i) in ev.iter().chain(&cens).enumerate() {
        folds[pos % k].push(i);
    }
    for f in folds.iter_mut() {
        f.sort_unstable();
    }
    Ok(FoldAssignment { folds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub mean: f64,
    pub folds: Vec<f64>,
}

impl From<f64> for CvScore {
    fn from(v: f64) -> Self {
        CvScore { mean: v, folds: Vec::new() }
    }
}

/// Fits on k−1 folds and scores the held-out fold by Harrell's C; folds run in
/// parallel and any fold failure fails the whole score.
pub fn cv_score<M, F>(
    factory: F,
    x: &Matrix<f64>,
    outcomes: &[SurvivalOutcome<f64>],
    folds: &FoldAssignment,
) -> Result<CvScore>
where
    M: SurvivalModel<f64>,
    F: Fn(&Matrix<f64>, &[SurvivalOutcome<f64>]) -> Result<M> + Sync,
{
    if x.n_rows() != outcomes.len() {
        return Err(Error::DimensionMismatch {
            expected: outcomes.len(),
            got: x.n_rows(),
        });
    }
    let scores: Vec<Result<f64>> = (0..folds.k())
        .into_par_iter()
        .map(|f| {
            let tr = folds.train_indices(f);
            let te = &folds.folds[f];
            let ytr: Vec<_> = tr.iter().map(|&i| outcomes[i]).collect();
            let yte: Vec<_> = te.iter().map(|&i| outcomes[i]).collect();
            let model = factory(&x.select_rows(&tr), &ytr)?;
            let xte = x.select_rows(te);
            let risk: Vec<f64> = xte.rows().map(|r| model.risk(r)).collect::<Result<_>>()?;
            Ok(harrell_cindex(&risk, &yte)?.c_index)
        })
        .collect();
    let folds: Vec<f64> = scores.into_iter().collect::<Result<_>>()?;
    Ok(CvScore {
        mean: folds.iter().sum::<f64>() / folds.len() as f64,
        folds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpeOptions {
    pub gamma: f64,
    pub n_startup: usize,
    pub n_candidates: usize,
}

impl Default for TpeOptions {
    fn default() -> Self {
        TpeOptions {
            gamma: 0.25,
            n_startup: 10,
            n_candidates: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub config: Config,
    /// `None` for failed trials.
    pub score: Option<f64>,
    #[serde(default)]
    pub fold_scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub trials: Vec<Trial>,
}

impl TrialLog {
    /// Highest-scoring trial; ties go to the earliest.
    pub fn best(&self) -> Option<&Trial> {
        self.trials
            .iter()
            .filter(|t| t.score.is_some())
            .fold(None, |acc: Option<&Trial>, t| match acc {
                Some(b) if b.score >= t.score => Some(b),
                _ => Some(t),
            })
    }

    pub fn best_so_far(&self) -> Vec<Option<f64>> {
        let mut cur: Option<f64> = None;
        self.trials
            .iter()
            .map(|t| {
                if let Some(s) = t.score {
                    cur = Some(cur.map_or(s, |c| c.max(s)));
                }
                cur
            })
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.trials {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n").map_err(|source| Error::Io {
                path: "<trial log>".into(),
                source,
            })?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut trials = Vec::new();
        for line in r.lines() {
            let line = line.map_err(|source| Error::Io {
                path: "<trial log>".into(),
                source,
            })?;
            if !line.trim().is_empty() {
                trials.push(serde_json::from_str(&line)?);
            }
        }
        Ok(TrialLog { trials })
    }
}

fn uniform_sample(d: &Dimension, rng: &mut ChaCha8Rng) -> ParamValue {
    match d {
        Dimension::Int { low, high, .. } => ParamValue::Int(rng.random_range(*low..=*high)),
        Dimension::Real { low, high, log, .. } => {
            if *log {
                ParamValue::Real(rng.random_range(low.ln()..=high.ln()).exp().clamp(*low, *high))
            } else {
                ParamValue::Real(rng.random_range(*low..=*high))
            }
        }
        Dimension::Categorical { choices, .. } => {
            ParamValue::Cat(choices[rng.random_range(0..choices.len())].clone())
        }
    }
}

/// One-dimensional Parzen estimator in the dimension's internal coordinates
/// (log for log-scale reals, continuous for integers).
enum Parzen {
    Numeric {
        centers: Vec<f64>,
        bw: f64,
        low: f64,
        high: f64,
    },
    Discrete {
        weights: Vec<f64>,
    },
}

fn internal_bounds(d: &Dimension) -> (f64, f64) {
    match d {
        Dimension::Int { low, high, .. } => (*low as f64 - 0.5, *high as f64 + 0.5),
        Dimension::Real { low, high, log: true, .. } => (low.ln(), high.ln()),
        Dimension::Real { low, high, .. } => (*low, *high),
        Dimension::Categorical { .. } => unreachable!(),
    }
}

fn to_internal(d: &Dimension, v: &ParamValue) -> f64 {
    match (d, v) {
        (Dimension::Real { log: true, .. }, ParamValue::Real(x)) => x.ln(),
        (_, v) => v.as_f64().expect("numeric value"),
    }
}

fn norm_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

impl Parzen {
    fn build(d: &Dimension, obs: &[&ParamValue]) -> Parzen {
        match d {
            Dimension::Categorical { choices, .. } => {
                let mut weights = vec![1.0; choices.len()];
                for v in obs {
                    if let Some(i) = choices.iter().position(|c| Some(c.as_str()) == v.as_str()) {
                        weights[i] += 1.0;
                    }
                }
                let s: f64 = weights.iter().sum();
                weights.iter_mut().for_each(|w| *w /= s);
                Parzen::Discrete { weights }
            }
            _ => {
                let (low, high) = internal_bounds(d);
                let centers: Vec<f64> = obs.iter().map(|v| to_internal(d, v)).collect();
                let range = (high - low).max(f64::MIN_POSITIVE);
                let m = centers.len() as f64;
                let scott = if centers.len() > 1 {
                    let mean = centers.iter().sum::<f64>() / m;
                    let var = centers.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (m - 1.0);
                    1.06 * var.sqrt() * m.powf(-0.2)
                } else {
                    0.0
                };
                // floor keeps repeated proposals from collapsing the estimator
                let floor = range / (1.0 + m).min(100.0);
                Parzen::Numeric {
                    centers,
                    bw: scott.clamp(floor, range),
                    low,
                    high,
                }
            }
        }
    }

    /// Mixture of truncated Gaussians plus one uniform prior component.
    fn density(&self, x: f64) -> f64 {
        match self {
            Parzen::Discrete { weights } => weights[x as usize],
            Parzen::Numeric { centers, bw, low, high } => {
                let uniform = 1.0 / (high - low).max(f64::MIN_POSITIVE);
                let mut s = uniform;
                for &c in centers {
                    let mass = norm_cdf((high - c) / bw) - norm_cdf((low - c) / bw);
                    let z = (x - c) / bw;
                    s += (-0.5 * z * z).exp() / (bw * (2.0 * std::f64::consts::PI).sqrt()) / mass.max(1e-300);
                }
                s / (centers.len() as f64 + 1.0)
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Parzen::Discrete { weights } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        return i as f64;
                    }
                }
                (weights.len() - 1) as f64
            }
            Parzen::Numeric { centers, bw, low, high } => {
                let k = rng.random_range(0..=centers.len());
                if k == centers.len() {
                    return rng.random_range(*low..=*high);
                }
                for _ in 0..64 {
                    let z: f64 = rng.sample(StandardNormal);
                    let x = centers[k] + bw * z;
                    if (*low..=*high).contains(&x) {
                        return x;
                    }
                }
                centers[k].clamp(*low, *high)
            }
        }
    }
}

fn from_internal(d: &Dimension, x: f64) -> ParamValue {
    match d {
        Dimension::Int { low, high, .. } => ParamValue::Int((x.round() as i64).clamp(*low, *high)),
        Dimension::Real { low, high, log, .. } => {
            let v = if *log { x.exp() } else { x };
            ParamValue::Real(v.clamp(*low, *high))
        }
        Dimension::Categorical { choices, .. } => ParamValue::Cat(choices[x as usize].clone()),
    }
}

fn density_coord(d: &Dimension, v: &ParamValue) -> f64 {
    match d {
        Dimension::Categorical { choices, .. } => {
            choices.iter().position(|c| Some(c.as_str()) == v.as_str()).unwrap_or(0) as f64
        }
        _ => to_internal(d, v),
    }
}

fn propose(space: &SearchSpace, log: &TrialLog, opts: &TpeOptions, rng: &mut ChaCha8Rng) -> Config {
    let mut ok: Vec<&Trial> = log.trials.iter().filter(|t| t.score.is_some()).collect();
    if log.trials.len() < opts.n_startup || ok.is_empty() {
        return space
            .dims
            .iter()
            .map(|d| (d.name().to_string(), uniform_sample(d, rng)))
            .collect();
    }
    // stable: equal scores keep trial order
    ok.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores"));
    let n_good = ((opts.gamma * ok.len() as f64).ceil() as usize).clamp(1, ok.len());
    let good = &ok[..n_good];
    let bad: Vec<&Trial> = ok[n_good..]
        .iter()
        .copied()
        .chain(log.trials.iter().filter(|t| t.score.is_none()))
        .collect();
    let models: Vec<(Parzen, Parzen)> = space
        .dims
        .iter()
        .map(|d| {
            let gv: Vec<&ParamValue> = good.iter().map(|t| &t.config[d.name()]).collect();
            let bv: Vec<&ParamValue> = bad.iter().map(|t| &t.config[d.name()]).collect();
            (Parzen::build(d, &gv), Parzen::build(d, &bv))
        })
        .collect();
    let mut best: Option<(f64, Config)> = None;
    for _ in 0..opts.n_candidates.max(1) {
        let mut cfg = Config::new();
        let mut score = 0.0;
        for (d, (l, g)) in space.dims.iter().zip(&models) {
            let v = from_internal(d, l.sample(rng));
            let x = density_coord(d, &v);
            score += l.density(x).ln() - g.density(x).ln();
            cfg.insert(d.name().to_string(), v);
        }
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, cfg));
        }
    }
    best.expect("at least one candidate").1
}

/// Runs `n_trials` trials (continuing any in `resume`). Failed evaluations are
/// logged and kept out of the good set. Errors only if every trial failed.
pub fn tpe_optimize<F>(
    space: &SearchSpace,
    mut objective: F,
    n_trials: usize,
    seed: u64,
    opts: &TpeOptions,
    resume: Option<TrialLog>,
) -> Result<(Config, TrialLog)>
where
    F: FnMut(&Config) -> Result<CvScore>,
{
    space.validate()?;
    if n_trials == 0 {
        return Err(Error::InvalidArgument("n_trials must be >= 1".into()));
    }
    let mut log = resume.unwrap_or_default();
    log.trials.truncate(n_trials);
    for index in log.trials.len()..n_trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let config = propose(space, &log, opts, &mut rng);
        debug_assert!(space.contains(&config));
        let trial = match objective(&config) {
            Ok(s) if s.mean.is_finite() => Trial {
                index,
                config,
                score: Some(s.mean),
                fold_scores: s.folds,
                error: None,
            },
            Ok(s) => Trial {
                index,
                config,
                score: None,
                fold_scores: s.folds,
                error: Some(format!("non-finite score {}", s.mean)),
            },
            Err(e) => Trial {
                index,
                config,
                score: None,
                fold_scores: Vec::new(),
                error: Some(e.to_string()),
            },
        };
        log.trials.push(trial);
    }
    match log.best() {
        Some(b) => Ok((b.config.clone(), log)),
        None => Err(Error::AllTrialsFailed(log.trials.len())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub spec: ModelSpec,
    pub config: Config,
    pub cv: CvScore,
    pub log: TrialLog,
}

/// TPE over `model_search_space(kind, p)` scored by `cv_score`. Forests are
/// fitted with `seed` in every fold.
pub fn tune_model(
    kind: ModelKind,
    x: &Matrix<f64>,
    outcomes: &[SurvivalOutcome<f64>],
    folds: &FoldAssignment,
    n_trials: usize,
    seed: u64,
    opts: &TpeOptions,
) -> Result<TuneResult> {
    let space = model_search_space(kind, x.n_cols());
    let objective = |c: &Config| {
        let spec = config_to_spec(kind, c)?;
        cv_score(|xt, yt| fit_model(&spec, xt, yt, seed), x, outcomes, folds)
    };
    let (config, log) = tpe_optimize(&space, objective, n_trials, seed, opts, None)?;
    let best = log.best().expect("tpe_optimize returned a best trial");
    let cv = CvScore {
        mean: best.score.expect("best trial scored"),
        folds: best.fold_scores.clone(),
    };
    Ok(TuneResult {
        spec: config_to_spec(kind, &config)?,
        config,
        cv,
        log,
    })
}

/// How a feature subset is scored during forward selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SubsetTuning {
    /// Re-tune with this many TPE trials per subset.
    Retune { n_trials: usize },
    /// Score every subset with one fixed spec.
    Fixed { spec: ModelSpec },
}

/// Mean CV C-index of `kind` on the given features of a fully observed cohort.
pub fn score_subset(
    cohort: &Cohort,
    features: &[String],
    kind: ModelKind,
    folds: &FoldAssignment,
    tuning: &SubsetTuning,
    seed: u64,
) -> Result<f64> {
    let cols: Vec<usize> = features
        .iter()
        .map(|f| cohort.feature_index(f).ok_or_else(|| Error::UnknownFeature(f.clone())))
        .collect::<Result<_>>()?;
    let (x, _) = cohort.select_features(&cols).design_matrix();
    match tuning {
        SubsetTuning::Retune { n_trials } => {
            Ok(tune_model(kind, &x, &cohort.outcomes, folds, *n_trials, seed, &TpeOptions::default())?.cv.mean)
        }
        SubsetTuning::Fixed { spec } => {
            if spec.kind() != kind {
                return Err(Error::InvalidArgument("fixed spec does not match model kind".into()));
            }
            let spec = clamp_features_per_split(spec, x.n_cols());
            Ok(cv_score(|xt, yt| fit_model(&spec, xt, yt, seed), &x, &cohort.outcomes, folds)?.mean)
        }
    }
}

fn clamp_features_per_split(spec: &ModelSpec, p: usize) -> ModelSpec {
    let mut s = spec.clone();
    if let ModelSpec::Rsf(fp) | ModelSpec::Est(fp) = &mut s {
        fp.features_per_split = fp.features_per_split.map(|k| k.min(p.max(1)));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kfold_exact_arithmetic() {
        let events: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        let f = stratified_kfold(&events, 5, 3).unwrap();
        for fold in &f.folds {
            assert_eq!(fold.iter().filter(|&&i| events[i]).count(), 1);
            assert_eq!(fold.len(), 2);
        }
        let mut all: Vec<usize> = f.folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(f, stratified_kfold(&events, 5, 3).unwrap());
        assert!(stratified_kfold(&events, 6, 3).is_err());
    }

    #[test]
    fn kfold_443_rows_162_events() {
        let events: Vec<bool> = (0..443).map(|i| i < 162).collect();
        let f = stratified_kfold(&events, 5, 1).unwrap();
        for fold in &f.folds {
            let e = fold.iter().filter(|&&i| events[i]).count();
            assert!(e == 32 || e == 33);
            let frac = 162.0 / 443.0;
            assert!((e as f64 - frac * fold.len() as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn budget_one_and_constant_objective() {
        let space = SearchSpace::new(vec![Dimension::Int { name: "x".into(), low: 1, high: 100 }]).unwrap();
        let (c, log) = tpe_optimize(&space, |_| Ok(1.0.into()), 1, 9, &TpeOptions::default(), None).unwrap();
        assert_eq!(log.trials.len(), 1);
        assert_eq!(log.trials[0].config, c);
        let (_, log) = tpe_optimize(&space, |_| Ok(0.3.into()), 30, 9, &TpeOptions::default(), None).unwrap();
        assert_eq!(log.trials.len(), 30);
        assert!(log.trials.iter().all(|t| space.contains(&t.config)));
    }

    #[test]
    fn all_failures_error() {
        let space = SearchSpace::new(vec![Dimension::Int { name: "x".into(), low: 1, high: 3 }]).unwrap();
        let r = tpe_optimize(
            &space,
            |_| Err(Error::Degenerate("x".into())),
            5,
            0,
            &TpeOptions::default(),
            None,
        );
        assert!(matches!(r, Err(Error::AllTrialsFailed(5))));
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let space = model_search_space(ModelKind::Est, 6);
        let obj = |c: &Config| -> Result<CvScore> {
            let t = c["n_trees"].as_f64().unwrap();
            let m = c["min_leaf_size"].as_f64().unwrap();
            Ok((-(t - 200.0).abs() - (m - 12.0).abs()).into())
        };
        let opts = TpeOptions::default();
        let (_, full) = tpe_optimize(&space, obj, 30, 4, &opts, None).unwrap();
        let (_, part) = tpe_optimize(&space, obj, 17, 4, &opts, None).unwrap();
        let mut buf = Vec::new();
        part.write_jsonl(&mut buf).unwrap();
        let back = TrialLog::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, part);
        let (_, resumed) = tpe_optimize(&space, obj, 30, 4, &opts, Some(back)).unwrap();
        assert_eq!(resumed, full);
    }

    #[test]
    fn log_scale_and_config_mapping() {
        let space = model_search_space(ModelKind::Cox, 3);
        let (c, log) = tpe_optimize(&space, |c| Ok((-c["lambda"].as_f64().unwrap().ln().abs()).into()), 40, 2, &TpeOptions::default(), None).unwrap();
        assert!(log.trials.iter().all(|t| space.contains(&t.config)));
        let lam = c["lambda"].as_f64().unwrap();
        assert!(lam > 0.2 && lam < 5.0, "{lam}");
        assert!(matches!(config_to_spec(ModelKind::Cox, &c).unwrap(), ModelSpec::Cox { .. }));
        let mut fc = Config::new();
        fc.insert("n_trees".into(), ParamValue::Int(60));
        fc.insert("min_leaf_size".into(), ParamValue::Int(7));
        fc.insert("max_depth_mode".into(), ParamValue::Cat("unbounded".into()));
        fc.insert("max_depth".into(), ParamValue::Int(9));
        fc.insert("features_per_split".into(), ParamValue::Int(2));
        match config_to_spec(ModelKind::Est, &fc).unwrap() {
            ModelSpec::Est(p) => {
                assert_eq!(p.max_depth, None);
                assert_eq!(p.n_trees, 60);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trial_log_json_shape() {
        let mut cfg = Config::new();
        cfg.insert("lambda".into(), ParamValue::Real(0.5));
        cfg.insert("mode".into(), ParamValue::Cat("limited".into()));
        let t = Trial { index: 0, config: cfg, score: Some(0.7), fold_scores: vec![0.6, 0.8], error: None };
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"{"index":0,"config":{"lambda":0.5,"mode":"limited"},"score":0.7,"fold_scores":[0.6,0.8]}"#);
        let back: Trial = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }
}
