//! Filter ensemble (MI, SURF, mRMR, univariate Cox), intersection, prior
//! injection and greedy forward selection.
//!
//! The three classification-style filters target the binary event flag; only
//! the Cox screen sees the censored outcome. Inputs must be fully observed.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Cohort;
use crate::error::{Error, Result};
use crate::models::cox::{fit_cox_ridge, CoxObjective};
use crate::stats::{benjamini_hochberg, chi2_sf};

pub const MI_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMethod {
    MutualInformation,
    SurfRelief,
    Mrmr,
    UnivariateCox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    pub score: f64,
    /// mRMR: the MID criterion value at selection time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_adjusted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub method: FilterMethod,
    /// Sorted by non-increasing score; ties keep input feature order.
    pub features: Vec<RankedFeature>,
}

impl FeatureRanking {
    fn from_scores(method: FilterMethod, names: &[String], scores: &[f64]) -> Self {
        let mut idx: Vec<usize> = (0..names.len()).collect();
        idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        FeatureRanking {
            method,
            features: idx
                .into_iter()
                .map(|i| RankedFeature {
                    name: names[i].clone(),
                    score: scores[i],
                    gain: None,
                    p_value: None,
                    p_adjusted: None,
                })
                .collect(),
        }
    }

    pub fn names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn top(&self, k: usize) -> Vec<String> {
        self.features.iter().take(k).map(|f| f.name.clone()).collect()
    }

    pub fn score_of(&self, name: &str) -> Option<f64> {
        self.features.iter().find(|f| f.name == name).map(|f| f.score)
    }
}

fn require_complete(x: &Cohort) -> Result<()> {
    if x.total_missing() > 0 {
        return Err(Error::InvalidArgument(
            "feature selection needs a fully observed cohort; impute first".into(),
        ));
    }
    Ok(())
}

fn column(x: &Cohort, c: usize) -> Vec<f64> {
    (0..x.n_rows()).map(|r| x.raw(r, c)).collect()
}

/// Bin codes: categorical cells as-is, continuous cells by equal-frequency
/// binning where tied values always share a bin.
fn discretize(x: &Cohort, c: usize) -> Vec<usize> {
    let v = column(x, c);
    if x.features[c].is_categorical() {
        return v.iter().map(|&a| a as usize).collect();
    }
    let n = v.len();
    let mut sorted = v.clone();
    sorted.sort_by(f64::total_cmp);
    v.iter()
        .map(|a| {
            let below = sorted.partition_point(|s| s < a);
            below * MI_BINS / n
        })
        .collect()
}

/// Plug-in mutual information (nats) of two discrete codings.
pub fn discrete_mi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let na = a.iter().max().map_or(0, |m| m + 1);
    let nb = b.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0usize; na * nb];
    let mut pa = vec![0usize; na];
    let mut pb = vec![0usize; nb];
    for (&i, &j) in a.iter().zip(b) {
        joint[i * nb + j] += 1;
        pa[i] += 1;
        pb[j] += 1;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for i in 0..na {
        for j in 0..nb {
            let c = joint[i * nb + j];
            if c > 0 {
                let c = c as f64;
                mi += c / nf * (c * nf / (pa[i] as f64 * pb[j] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

fn event_codes(x: &Cohort) -> Vec<usize> {
    x.outcomes.iter().map(|o| usize::from(o.event)).collect()
}

pub fn mutual_information_rank(x: &Cohort) -> Result<FeatureRanking> {
    require_complete(x)?;
    if x.n_rows() < 10 {
        return Err(Error::InvalidArgument("mutual information needs at least 10 rows".into()));
    }
    let y = event_codes(x);
    let scores: Vec<f64> = (0..x.n_features()).map(|c| discrete_mi(&discretize(x, c), &y)).collect();
    Ok(FeatureRanking::from_scores(FilterMethod::MutualInformation, &x.feature_names(), &scores))
}

/// SURF: neighbours are all rows closer than the mean pairwise distance.
/// Each instance adds (mean miss difference − mean hit difference) / n.
/// Differences are range-normalized for continuous and 0/1 for categorical
/// features; the distance is their sum.
pub fn surf_relieff_rank(x: &Cohort) -> Result<FeatureRanking> {
    require_complete(x)?;
    let (n, p) = (x.n_rows(), x.n_features());
    let y: Vec<bool> = x.outcomes.iter().map(|o| o.event).collect();
    let n_pos = y.iter().filter(|&&e| e).count();
    if n_pos < 2 || n - n_pos < 2 {
        return Err(Error::InvalidArgument("SURF needs at least two rows per class".into()));
    }
    let cols: Vec<Vec<f64>> = (0..p).map(|c| column(x, c)).collect();
    let scale: Vec<f64> = (0..p)
        .map(|c| {
            if x.features[c].is_categorical() {
                return 1.0;
            }
            let (lo, hi) = cols[c]
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            hi - lo
        })
        .collect();
    let diff = |c: usize, i: usize, j: usize| -> f64 {
        if scale[c] == 0.0 {
            0.0
        } else if x.features[c].is_categorical() {
            f64::from(u8::from(cols[c][i] != cols[c][j]))
        } else {
            (cols[c][i] - cols[c][j]).abs() / scale[c]
        }
    };
    let mut dist = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = (0..p).map(|c| diff(c, i, j)).sum();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
            total += d;
        }
    }
    let names = x.feature_names();
    let threshold = total / (n * (n - 1) / 2) as f64;
    if threshold == 0.0 {
        return Ok(FeatureRanking::from_scores(FilterMethod::SurfRelief, &names, &vec![0.0; p]));
    }
    let mut w = vec![0.0; p];
    for i in 0..n {
        let (mut hits, mut misses) = (Vec::new(), Vec::new());
        for j in 0..n {
            if j != i && dist[i * n + j] < threshold {
                if y[i] == y[j] { hits.push(j) } else { misses.push(j) }
            }
        }
        for (c, wc) in w.iter_mut().enumerate() {
            let mean = |set: &[usize]| {
                if set.is_empty() {
                    0.0
                } else {
                    set.iter().map(|&j| diff(c, i, j)).sum::<f64>() / set.len() as f64
                }
            };
            *wc += (mean(&misses) - mean(&hits)) / n as f64;
        }
    }
    Ok(FeatureRanking::from_scores(FilterMethod::SurfRelief, &names, &w))
}

/// Greedy MID mRMR. The first `m` features are chosen greedily; the rest follow
/// in relevance order. Scores are position based (`(p - k) / p`) so they stay
/// non-increasing; the MID value at selection is kept in `gain`.
pub fn mrmr_rank(x: &Cohort, m: usize) -> Result<FeatureRanking> {
    require_complete(x)?;
    let p = x.n_features();
    if m > p {
        return Err(Error::InvalidArgument(format!("mRMR m = {m} exceeds {p} features")));
    }
    let y = event_codes(x);
    let codes: Vec<Vec<usize>> = (0..p).map(|c| discretize(x, c)).collect();
    let relevance: Vec<f64> = codes.iter().map(|c| discrete_mi(c, &y)).collect();
    let mut redundancy = vec![0.0; p];
    let mut chosen: Vec<(usize, f64)> = Vec::with_capacity(p);
    let mut open: Vec<bool> = vec![true; p];
    for step in 0..m {
        let mut best: Option<(usize, f64)> = None;
        for c in (0..p).filter(|&c| open[c]) {
            let g = if step == 0 {
                relevance[c]
            } else {
                relevance[c] - redundancy[c] / step as f64
            };
            if best.is_none_or(|(_, b)| g > b) {
                best = Some((c, g));
            }
        }
        let (c, g) = best.expect("m <= p leaves a candidate");
        open[c] = false;
        chosen.push((c, g));
        for o in (0..p).filter(|&o| open[o]) {
            redundancy[o] += discrete_mi(&codes[o], &codes[c]);
        }
    }
    let mut rest: Vec<usize> = (0..p).filter(|&c| open[c]).collect();
    rest.sort_by(|&a, &b| relevance[b].total_cmp(&relevance[a]).then(a.cmp(&b)));
    let names = x.feature_names();
    let features = chosen
        .into_iter()
        .map(|(c, g)| (c, Some(g)))
        .chain(rest.into_iter().map(|c| (c, None)))
        .enumerate()
        .map(|(k, (c, gain))| RankedFeature {
            name: names[c].clone(),
            score: (p - k) as f64 / p as f64,
            gain,
            p_value: None,
            p_adjusted: None,
        })
        .collect();
    Ok(FeatureRanking {
        method: FilterMethod::Mrmr,
        features,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxScreen {
    pub alpha: f64,
    /// Input feature order.
    pub features: Vec<String>,
    /// Score = −ln(raw p); failed fits score −∞ and carry no p-value.
    pub ranking: FeatureRanking,
    pub retained: Vec<String>,
    pub failed: Vec<String>,
}

/// Unpenalized single-feature Cox fits; Wald χ² (df = number of design
/// columns, so multi-level categoricals are tested jointly), BH across features.
pub fn univariate_cox_screen(x: &Cohort, alpha: f64) -> Result<CoxScreen> {
    require_complete(x)?;
    let names = x.feature_names();
    let raw: Vec<Option<f64>> = (0..x.n_features())
        .into_par_iter()
        .map(|c| {
            let sub = x.select_features(&[c]);
            let (design, _) = sub.design_matrix();
            let fit = fit_cox_ridge(&design, &sub.outcomes, 0.0).ok()?;
            let obj = CoxObjective::new(&design, &sub.outcomes, 0.0).ok()?;
            let h = obj.evaluate(&fit.coefficients).hessian;
            let d = fit.coefficients.len();
            let b = &fit.coefficients;
            let mut wald = 0.0;
            for i in 0..d {
                for j in 0..d {
                    wald -= b[i] * h[i * d + j] * b[j];
                }
            }
            (wald.is_finite() && wald >= 0.0).then(|| chi2_sf(wald, d as f64))
        })
        .collect();
    let ps: Vec<f64> = raw.iter().map(|p| p.unwrap_or(f64::NAN)).collect();
    let adj = benjamini_hochberg(&ps);
    let scores: Vec<f64> = raw
        .iter()
        .map(|p| p.map_or(f64::NEG_INFINITY, |p| -p.max(f64::MIN_POSITIVE).ln()))
        .collect();
    let mut ranking = FeatureRanking::from_scores(FilterMethod::UnivariateCox, &names, &scores);
    for f in ranking.features.iter_mut() {
        let c = x.feature_index(&f.name).expect("ranked name exists");
        f.p_value = raw[c];
        f.p_adjusted = raw[c].map(|_| adj[c]);
    }
    let retained: Vec<String> = names
        .iter()
        .enumerate()
        .filter(|&(c, _)| raw[c].is_some() && adj[c] < alpha)
        .map(|(_, n)| n.clone())
        .collect();
    let failed: Vec<String> = names
        .iter()
        .enumerate()
        .filter(|&(c, _)| raw[c].is_none())
        .map(|(_, n)| n.clone())
        .collect();
    Ok(CoxScreen {
        alpha,
        features: names,
        ranking,
        retained,
        failed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Feature universe in input order.
    pub universe: Vec<String>,
    pub keep_frac: f64,
    pub retained: BTreeMap<FilterMethod, Vec<String>>,
    /// In universe order.
    pub intersection: Vec<String>,
    pub priors: Vec<String>,
    /// Intersection followed by priors not already in it.
    pub candidates: Vec<String>,
    pub warnings: Vec<String>,
}

/// Top ⌈keep_frac · p⌉ of each ranking, intersected with each other and with
/// the Cox-screen set.
pub fn combine_filters(
    rankings: &[FeatureRanking],
    cox: &CoxScreen,
    keep_frac: f64,
) -> Result<SelectionResult> {
    if !(keep_frac > 0.0 && keep_frac <= 1.0) {
        return Err(Error::InvalidArgument(format!("keep_frac {keep_frac} must lie in (0, 1]")));
    }
    let universe = cox.features.clone();
    let mut sorted_u = universe.clone();
    sorted_u.sort();
    for r in rankings {
        let mut names: Vec<String> = r.names().iter().map(|s| s.to_string()).collect();
        names.sort();
        if names != sorted_u {
            return Err(Error::Schema(format!("{:?} ranking covers a different feature set", r.method)));
        }
    }
    let p = universe.len();
    let k = ((keep_frac * p as f64).ceil() as usize).min(p);
    let mut retained = BTreeMap::new();
    for r in rankings {
        retained.insert(r.method, r.top(k));
    }
    retained.insert(FilterMethod::UnivariateCox, cox.retained.clone());
    let intersection: Vec<String> = universe
        .iter()
        .filter(|n| retained.values().all(|set| set.contains(n)))
        .cloned()
        .collect();
    let mut warnings = Vec::new();
    if intersection.is_empty() {
        warnings.push("filter intersection is empty; forward selection will see priors only".into());
    }
    Ok(SelectionResult {
        universe,
        keep_frac,
        retained,
        candidates: intersection.clone(),
        intersection,
        priors: Vec::new(),
        warnings,
    })
}

pub fn inject_priors(selection: &SelectionResult, priors: &[String]) -> Result<SelectionResult> {
    let mut out = selection.clone();
    for p in priors {
        if !selection.universe.contains(p) {
            return Err(Error::UnknownFeature(p.clone()));
        }
        if !out.priors.contains(p) {
            out.priors.push(p.clone());
        }
        if !out.candidates.contains(p) {
            out.candidates.push(p.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardStep {
    pub added: String,
    pub score: f64,
    /// Candidates whose evaluation failed at this step, with the error.
    pub skipped: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardSelection {
    pub selected: Vec<String>,
    /// One entry per accepted addition; scores are non-decreasing.
    pub trace: Vec<ForwardStep>,
    /// Best score of the step that triggered the stop, if any.
    pub rejected_score: Option<f64>,
    pub min_improvement: f64,
}

impl ForwardSelection {
    pub fn best_score(&self) -> f64 {
        self.trace.last().map_or(EMPTY_SUBSET_SCORE, |s| s.score)
    }
}

/// Score assigned to the empty subset.
pub const EMPTY_SUBSET_SCORE: f64 = 0.5;

/// Greedy forward selection. `evaluate` maps a feature subset to its mean CV
/// C-index; each step adds the best candidate (ties: earliest in `candidates`)
/// and stops when the gain is below `min_improvement`. Evaluations within a
/// step run in parallel.
pub fn forward_select<F>(candidates: &[String], evaluate: F, min_improvement: f64) -> Result<ForwardSelection>
where
    F: Fn(&[String]) -> Result<f64> + Sync,
{
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("forward selection needs at least one candidate".into()));
    }
    let mut selected: Vec<String> = Vec::new();
    let mut trace = Vec::new();
    let mut current = EMPTY_SUBSET_SCORE;
    let mut rejected_score = None;
    let mut remaining: Vec<String> = candidates.to_vec();
    remaining.dedup();
    while !remaining.is_empty() {
        let results: Vec<Result<f64>> = remaining
            .par_iter()
            .map(|c| {
                let mut subset = selected.clone();
                subset.push(c.clone());
                evaluate(&subset)
            })
            .collect();
        let mut best: Option<(usize, f64)> = None;
        let mut skipped = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(s) if s.is_finite() => {
                    if best.is_none_or(|(_, b)| s > b) {
                        best = Some((i, s));
                    }
                }
                Ok(s) => skipped.push((remaining[i].clone(), format!("non-finite score {s}"))),
                Err(e) => skipped.push((remaining[i].clone(), e.to_string())),
            }
        }
        let Some((i, s)) = best else {
            break;
        };
        if s - current < min_improvement {
            rejected_score = Some(s);
            break;
        }
        let added = remaining.remove(i);
        selected.push(added.clone());
        trace.push(ForwardStep { added, score: s, skipped });
        current = s;
    }
    Ok(ForwardSelection {
        selected,
        trace,
        rejected_score,
        min_improvement,
    })
}
