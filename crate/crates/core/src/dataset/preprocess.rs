use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{baseline_group_comparison, BaselineTable, Cohort, FeatureKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedFeature {
    pub name: String,
    pub missing_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRemovalReport {
    pub threshold: f64,
    pub dropped: Vec<DroppedFeature>,
    pub retained: usize,
}

/// Drops features whose missing fraction is strictly above `max_missing_frac`.
pub fn drop_sparse_features(
    cohort: &Cohort,
    max_missing_frac: f64,
) -> Result<(Cohort, SparseRemovalReport)> {
    if !(max_missing_frac > 0.0 && max_missing_frac < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "max_missing_frac {max_missing_frac} must lie in (0, 1)"
        )));
    }
    let n = cohort.n_rows().max(1) as f64;
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for (c, f) in cohort.features.iter().enumerate() {
        let frac = cohort.missing_count(c) as f64 / n;
        if frac > max_missing_frac {
            dropped.push(DroppedFeature {
                name: f.name.clone(),
                missing_fraction: frac,
            });
        } else {
            keep.push(c);
        }
    }
    if keep.is_empty() {
        return Err(Error::Degenerate("every feature exceeds the missingness threshold".into()));
    }
    let report = SparseRemovalReport {
        threshold: max_missing_frac,
        dropped,
        retained: keep.len(),
    };
    Ok((cohort.select_features(&keep), report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedSample {
    pub row_id: usize,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRemovalReport {
    pub required: Vec<String>,
    pub removed: Vec<RemovedSample>,
    pub remaining: usize,
}

/// Removes rows missing any required feature or any categorical feature.
pub fn drop_incomplete_samples(
    cohort: &Cohort,
    required: &[String],
) -> Result<(Cohort, SampleRemovalReport)> {
    let mut check: Vec<usize> = required
        .iter()
        .map(|name| {
            cohort
                .feature_index(name)
                .ok_or_else(|| Error::UnknownFeature(name.clone()))
        })
        .collect::<Result<_>>()?;
    for (c, f) in cohort.features.iter().enumerate() {
        if f.is_categorical() && !check.contains(&c) {
            check.push(c);
        }
    }
    check.sort_unstable();
    let mut keep = Vec::new();
    let mut removed = Vec::new();
    for r in 0..cohort.n_rows() {
        let missing: Vec<String> = check
            .iter()
            .filter(|&&c| cohort.is_missing(r, c))
            .map(|&c| cohort.features[c].name.clone())
            .collect();
        if missing.is_empty() {
            keep.push(r);
        } else {
            removed.push(RemovedSample {
                row_id: cohort.row_ids[r],
                missing,
            });
        }
    }
    let report = SampleRemovalReport {
        required: required.to_vec(),
        removed,
        remaining: keep.len(),
    };
    Ok((cohort.select_rows(&keep), report))
}

/// Row positions (into the cohort the split was drawn from), both ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Event-stratified random split: `round(train_frac · n)` of the events and of
/// the censored rows go to training.
pub fn stratified_split(
    events: &[bool],
    train_frac: f64,
    seed: u64,
) -> Result<SplitIndices> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_frac {train_frac} must lie in (0, 1)"
        )));
    }
    let mut ev: Vec<usize> = (0..events.len()).filter(|&i| events[i]).collect();
    let mut cens: Vec<usize> = (0..events.len()).filter(|&i| !events[i]).collect();
    if ev.is_empty() || cens.is_empty() {
        return Err(Error::Degenerate(
            "stratified split needs at least one event and one censored row".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ev.shuffle(&mut rng);
    cens.shuffle(&mut rng);
    let n_ev = (train_frac * ev.len() as f64).round() as usize;
    let n_cens = (train_frac * cens.len() as f64).round() as usize;
    let mut train: Vec<usize> = ev[..n_ev].iter().chain(&cens[..n_cens]).copied().collect();
    let mut test: Vec<usize> = ev[n_ev..].iter().chain(&cens[n_cens..]).copied().collect();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStat {
    pub name: String,
    pub mean: f64,
    /// Population (n-denominator) standard deviation.
    pub std: f64,
    /// False for zero-variance columns, which are passed through unscaled.
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub features: Vec<FeatureStat>,
}

impl NormalizationStats {
    pub fn get(&self, name: &str) -> Option<&FeatureStat> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn flagged(&self) -> Vec<&str> {
        self.features
            .iter()
            .filter(|f| !f.normalized)
            .map(|f| f.name.as_str())
            .collect()
    }

    pub fn to_z(&self, name: &str, v: f64) -> f64 {
        match self.get(name) {
            Some(s) if s.normalized => (v - s.mean) / s.std,
            _ => v,
        }
    }

    pub fn to_original(&self, name: &str, z: f64) -> f64 {
        match self.get(name) {
            Some(s) if s.normalized => z * s.std + s.mean,
            _ => z,
        }
    }
}

/// Mean and population std of each continuous feature over `train` rows,
/// observed cells only.
pub fn fit_normalizer(cohort: &Cohort, train: &[usize]) -> NormalizationStats {
    let features = cohort
        .features
        .iter()
        .enumerate()
        .filter(|(_, f)| matches!(f.kind, FeatureKind::Continuous))
        .map(|(c, f)| {
            let vals: Vec<f64> = train.iter().filter_map(|&r| cohort.value(r, c)).collect();
            let n = vals.len() as f64;
            let mean = if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / n };
            let var = if vals.is_empty() {
                0.0
            } else {
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
            };
            let std = var.sqrt();
            // relative test so that rounding noise on a constant column still counts as zero
            let normalized = std > 1e-12 * mean.abs().max(1.0);
            FeatureStat {
                name: f.name.clone(),
                mean,
                std,
                normalized,
            }
        })
        .collect();
    NormalizationStats { features }
}

pub fn apply_normalizer(cohort: &Cohort, stats: &NormalizationStats) -> Cohort {
    let mut out = cohort.clone();
    for (c, f) in cohort.features.iter().enumerate() {
        let Some(s) = stats.get(&f.name) else { continue };
        if !s.normalized {
            continue;
        }
        for r in 0..cohort.n_rows() {
            if let Some(v) = cohort.value(r, c) {
                out.set(r, c, Some((v - s.mean) / s.std));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImputationReport {
    pub imputed_cells: usize,
}

/// kNN imputation with the cohort itself as donor pool.
pub fn knn_impute(cohort: &Cohort, k: usize) -> Result<(Cohort, ImputationReport)> {
    knn_impute_from(cohort, cohort, k)
}

/// Fills missing continuous cells of `target` with the mean of the `k` nearest
/// `donors` that observe the cell. Distance is Euclidean over mutually observed
/// continuous features, rescaled by (continuous features / mutually observed).
pub fn knn_impute_from(
    target: &Cohort,
    donors: &Cohort,
    k: usize,
) -> Result<(Cohort, ImputationReport)> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if target.feature_names() != donors.feature_names() {
        return Err(Error::Schema("target and donor features differ".into()));
    }
    let cont: Vec<usize> = target
        .features
        .iter()
        .enumerate()
        .filter(|(_, f)| matches!(f.kind, FeatureKind::Continuous))
        .map(|(c, _)| c)
        .collect();
    let mut out = target.clone();
    let mut report = ImputationReport::default();
    let mut dist = Vec::with_capacity(donors.n_rows());
    for r in 0..target.n_rows() {
        let holes: Vec<usize> = cont.iter().copied().filter(|&c| target.is_missing(r, c)).collect();
        if holes.is_empty() {
            continue;
        }
        dist.clear();
        for d in 0..donors.n_rows() {
            let (mut ss, mut shared) = (0.0, 0usize);
            for &c in &cont {
                if let (Some(a), Some(b)) = (target.value(r, c), donors.value(d, c)) {
                    ss += (a - b).powi(2);
                    shared += 1;
                }
            }
            let dd = if shared == 0 {
                f64::INFINITY
            } else {
                (ss * cont.len() as f64 / shared as f64).sqrt()
            };
            dist.push((dd, d));
        }
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for c in holes {
            let picked: Vec<f64> = dist
                .iter()
                .filter_map(|&(_, d)| donors.value(d, c))
                .take(k)
                .collect();
            if picked.is_empty() {
                return Err(Error::NoDonor {
                    feature: target.features[c].name.clone(),
                    row: target.row_ids[r],
                });
            }
            out.set(r, c, Some(picked.iter().sum::<f64>() / picked.len() as f64));
            report.imputed_cells += 1;
        }
    }
    Ok((out, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub max_missing_frac: f64,
    /// Features whose absence disqualifies a sample; `None` uses the schema's
    /// `required` flags.
    pub required: Option<Vec<String>>,
    pub train_frac: f64,
    pub knn_k: usize,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            max_missing_frac: 0.20,
            required: None,
            train_frac: 0.8,
            knn_k: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessed {
    pub sparse: SparseRemovalReport,
    pub samples: SampleRemovalReport,
    /// Cohort after both drops, original scale, missing cells intact.
    pub clean: Cohort,
    pub split: SplitIndices,
    pub stats: NormalizationStats,
    /// Normalized and imputed training rows.
    pub train: Cohort,
    /// Normalized test rows imputed from training donors.
    pub test: Cohort,
    pub train_imputation: ImputationReport,
    pub test_imputation: ImputationReport,
    pub baseline: BaselineTable,
}

/// Sparse-feature drop, sample drop, split, normalize, impute, in that order.
pub fn preprocess(cohort: &Cohort, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    let (reduced, sparse) = drop_sparse_features(cohort, cfg.max_missing_frac)?;
    let required = cfg.required.clone().unwrap_or_else(|| {
        reduced
            .features
            .iter()
            .filter(|f| f.required)
            .map(|f| f.name.clone())
            .collect()
    });
    let (clean, samples) = drop_incomplete_samples(&reduced, &required)?;
    let events: Vec<bool> = clean.outcomes.iter().map(|o| o.event).collect();
    let split = stratified_split(&events, cfg.train_frac, cfg.seed)?;
    let stats = fit_normalizer(&clean, &split.train);
    let normalized = apply_normalizer(&clean, &stats);
    let train_raw = normalized.select_rows(&split.train);
    let test_raw = normalized.select_rows(&split.test);
    let (train, train_imputation) = knn_impute_from(&train_raw, &train_raw, cfg.knn_k)?;
    let (test, test_imputation) = knn_impute_from(&test_raw, &train_raw, cfg.knn_k)?;
    let baseline = baseline_group_comparison(&clean)?;
    Ok(Preprocessed {
        sparse,
        samples,
        clean,
        split,
        stats,
        train,
        test,
        train_imputation,
        test_imputation,
        baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureSpec;
    use crate::survcore::SurvivalOutcome;

    fn cohort_with(cols: Vec<Vec<Option<f64>>>, events: &[bool]) -> Cohort {
        let p = cols.len();
        let n = cols[0].len();
        let features = (0..p).map(|i| FeatureSpec::continuous(format!("f{i}"))).collect();
        let rows = (0..n).map(|r| cols.iter().map(|c| c[r]).collect()).collect();
        let outcomes = events
            .iter()
            .enumerate()
            .map(|(i, &e)| SurvivalOutcome::new(i as f64 + 1.0, e))
            .collect();
        Cohort::new(features, rows, outcomes).unwrap()
    }

    #[test]
    fn sparse_threshold_is_strict() {
        // 100 rows: f0 missing 21, f1 missing exactly 20
        let f0 = (0..100).map(|i| (i >= 21).then_some(i as f64)).collect();
        let f1 = (0..100).map(|i| (i >= 20).then_some(i as f64)).collect();
        let c = cohort_with(vec![f0, f1], &[true; 100]);
        let (out, rep) = drop_sparse_features(&c, 0.20).unwrap();
        assert_eq!(out.feature_names(), ["f1"]);
        assert_eq!(rep.dropped.len(), 1);
        assert_eq!(rep.dropped[0].name, "f0");
        assert!((rep.dropped[0].missing_fraction - 0.21).abs() < 1e-12);
    }

    #[test]
    fn dropping_everything_is_an_error() {
        let c = cohort_with(vec![vec![None, None, Some(1.0)]], &[true, false, true]);
        assert!(drop_sparse_features(&c, 0.2).is_err());
        assert!(drop_sparse_features(&c, 1.0).is_err());
    }

    #[test]
    fn incomplete_rows_follow_required_list() {
        let age = vec![Some(60.0), None, Some(70.0)];
        let crp = vec![Some(1.0), Some(2.0), None];
        let mut c = cohort_with(vec![age, crp], &[true, false, true]);
        c.features[0].name = "age".into();
        let (out, rep) = drop_incomplete_samples(&c, &["age".to_string()]).unwrap();
        assert_eq!(out.n_rows(), 2);
        assert_eq!(rep.removed.len(), 1);
        assert_eq!(rep.removed[0].row_id, 1);
        assert!(drop_incomplete_samples(&c, &["nope".to_string()]).is_err());
    }

    #[test]
    fn split_exact_arithmetic() {
        let events: Vec<bool> = (0..10).map(|i| i < 5).collect();
        let s = stratified_split(&events, 0.8, 1).unwrap();
        assert_eq!(s.train.iter().filter(|&&i| events[i]).count(), 4);
        assert_eq!(s.train.len(), 8);
        let again = stratified_split(&events, 0.8, 1).unwrap();
        assert_eq!(s, again);
        assert!(stratified_split(&events, 1.0, 1).is_err());
        assert!(stratified_split(&[true, true], 0.5, 1).is_err());
    }

    #[test]
    fn split_554_rows() {
        let events: Vec<bool> = (0..554).map(|i| i < 202).collect();
        let s = stratified_split(&events, 0.8, 42).unwrap();
        let ev = s.train.iter().filter(|&&i| events[i]).count();
        assert!((442..=444).contains(&s.train.len()), "{}", s.train.len());
        assert!(ev == 161 || ev == 162);
    }

    #[test]
    fn zscore_hand_values() {
        let c = cohort_with(vec![vec![Some(1.0), Some(2.0), Some(3.0), Some(2.0)]], &[true, false, true, false]);
        let stats = fit_normalizer(&c, &[0, 1, 2]);
        let z = apply_normalizer(&c, &stats);
        let s = 1.224_744_871_391_589;
        assert!((z.value(0, 0).unwrap() + s).abs() < 1e-12);
        assert!(z.value(1, 0).unwrap().abs() < 1e-15);
        assert!((z.value(2, 0).unwrap() - s).abs() < 1e-12);
        // test row equal to the training mean
        assert_eq!(z.value(3, 0).unwrap(), 0.0);
    }

    #[test]
    fn constant_column_flagged_and_unchanged() {
        let c = cohort_with(vec![vec![Some(4.0); 4]], &[true, false, true, false]);
        let stats = fit_normalizer(&c, &[0, 1, 2, 3]);
        assert_eq!(stats.flagged(), ["f0"]);
        assert_eq!(apply_normalizer(&c, &stats), c);
    }

    #[test]
    fn knn_hand_computed_mean() {
        // target row 0 misses f1; distances on f0 to rows 1..5 are 1,2,3,4,10
        let f0 = vec![Some(0.0), Some(1.0), Some(-2.0), Some(3.0), Some(4.0), Some(10.0)];
        let f1 = vec![None, Some(10.0), Some(20.0), Some(30.0), Some(40.0), Some(50.0)];
        let c = cohort_with(vec![f0.clone(), f1.clone()], &[true; 6]);
        let (out, rep) = knn_impute(&c, 5).unwrap();
        assert_eq!(rep.imputed_cells, 1);
        assert_eq!(out.value(0, 1), Some(30.0));
        let (out3, _) = knn_impute(&c, 3).unwrap();
        assert_eq!(out3.value(0, 1), Some(20.0));
    }

    #[test]
    fn knn_twin_with_k1() {
        let f0 = vec![Some(0.5), Some(0.5), Some(3.0)];
        let f1 = vec![Some(-1.0), Some(2.0), Some(7.0)];
        let f2 = vec![Some(9.0), None, Some(1.0)];
        let c = cohort_with(vec![f0, f1.clone(), f2], &[true, false, true]);
        let mut c2 = c.clone();
        c2.set(1, 1, Some(-1.0));
        let (out, _) = knn_impute(&c2, 1).unwrap();
        assert_eq!(out.value(1, 2), Some(9.0));
    }

    #[test]
    fn knn_identity_without_missing() {
        let c = cohort_with(vec![vec![Some(1.0), Some(2.0)]], &[true, false]);
        let (out, rep) = knn_impute(&c, 5).unwrap();
        assert_eq!(out, c);
        assert_eq!(rep.imputed_cells, 0);
    }

    #[test]
    fn knn_without_donor_errors() {
        let c = cohort_with(vec![vec![Some(1.0), Some(2.0)], vec![None, None]], &[true, false]);
        assert!(matches!(knn_impute(&c, 5), Err(Error::NoDonor { .. })));
    }
}
