//! Versioned, self-contained model artifact: everything needed to turn an
//! original-scale patient record into a prediction or explanation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    design_columns, format_number, knn_impute_from, Cohort, DesignColumn, FeatureKind, FeatureSpec,
    NormalizationStats,
};
use crate::error::{Error, Result};
use crate::explain::{
    kernel_shap, output_fn, waterfall_data, ModelOutput, ShapOptions, SignThreshold, Waterfall,
};
use crate::matrix::Matrix;
use crate::models::{FittedModel, ModelSpec, SurvivalModel};
use crate::survcore::{CurvePoint, SurvivalOutcome};

pub const ARTIFACT_VERSION: u32 = 1;

/// |z| beyond this is rejected outright rather than warned about.
pub const HARD_Z_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub n_train: usize,
    pub n_events: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_cindex: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureThreshold {
    pub feature: String,
    pub threshold: SignThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub version: u32,
    pub model: FittedModel<f64>,
    pub spec: ModelSpec,
    /// Raw input features; `design[..].source` indexes this list.
    pub features: Vec<FeatureSpec>,
    pub design: Vec<DesignColumn>,
    pub normalization: NormalizationStats,
    /// Normalized, fully observed training rows used as kNN donors.
    pub donors: Cohort,
    pub knn_k: usize,
    /// Design rows of surviving training patients (capped sample).
    pub background: Matrix<f64>,
    pub horizon_days: f64,
    pub output: ModelOutput,
    pub shap: ShapOptions,
    pub train_risk_median: f64,
    /// Original-scale training medians (continuous) and modes (categorical).
    pub defaults: BTreeMap<String, InputValue>,
    /// Original-scale training min/max of continuous features.
    pub observed_ranges: BTreeMap<String, [f64; 2]>,
    pub summary: TrainingSummary,
    #[serde(default)]
    pub thresholds: Vec<FeatureThreshold>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArtifactOptions {
    pub horizon_days: f64,
    pub background_cap: usize,
    pub donor_cap: usize,
    pub knn_k: usize,
    pub seed: u64,
}

impl Default for ArtifactOptions {
    fn default() -> Self {
        ArtifactOptions {
            horizon_days: 6142.0,
            background_cap: 100,
            donor_cap: 500,
            knn_k: 5,
            seed: 0,
        }
    }
}

fn capped(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, cap).into_vec();
    idx.sort_unstable();
    idx
}

impl ModelArtifact {
    /// `train` holds the model's features only, normalized and imputed, in
    /// the order the model was fitted on.
    pub fn build(
        model: FittedModel<f64>,
        spec: ModelSpec,
        train: &Cohort,
        normalization: &NormalizationStats,
        cv_cindex: Option<f64>,
        opts: &ArtifactOptions,
    ) -> Result<Self> {
        if train.total_missing() > 0 {
            return Err(Error::InvalidArgument("artifact training rows must be fully observed".into()));
        }
        let (x, design) = train.design_matrix();
        if model.n_features() != x.n_cols() {
            return Err(Error::DimensionMismatch { expected: x.n_cols(), got: model.n_features() });
        }
        let risks: Vec<f64> = x.rows().map(|r| model.risk(r)).collect::<Result<_>>()?;
        let train_risk_median =
            crate::explain::median(&risks).ok_or_else(|| Error::Degenerate("empty training set".into()))?;
        let survivors: Vec<usize> = (0..train.n_rows()).filter(|&i| !train.outcomes[i].event).collect();
        if survivors.is_empty() {
            return Err(Error::Degenerate("no surviving training patients for the SHAP background".into()));
        }
        let pick = capped(survivors.len(), opts.background_cap, opts.seed);
        let bg_rows: Vec<usize> = pick.iter().map(|&k| survivors[k]).collect();
        let background = x.select_rows(&bg_rows);
        let donors = train.select_rows(&capped(train.n_rows(), opts.donor_cap, opts.seed ^ 0x5eed));

        let stats = NormalizationStats {
            features: normalization
                .features
                .iter()
                .filter(|s| train.feature_index(&s.name).is_some())
                .cloned()
                .collect(),
        };
        let mut defaults = BTreeMap::new();
        let mut observed_ranges = BTreeMap::new();
        for (c, f) in train.features.iter().enumerate() {
            let col: Vec<f64> = (0..train.n_rows()).map(|r| train.raw(r, c)).collect();
            match &f.kind {
                FeatureKind::Continuous => {
                    let orig: Vec<f64> = col.iter().map(|&z| stats.to_original(&f.name, z)).collect();
                    let med = crate::explain::median(&orig).expect("non-empty");
                    defaults.insert(f.name.clone(), InputValue::Number(med));
                    let lo = orig.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = orig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    observed_ranges.insert(f.name.clone(), [lo, hi]);
                }
                FeatureKind::Categorical { levels } => {
                    let mut counts = vec![0usize; levels.len()];
                    for &v in &col {
                        counts[v as usize] += 1;
                    }
                    let mode = (0..levels.len()).max_by_key(|&l| (counts[l], std::cmp::Reverse(l))).unwrap_or(0);
                    defaults.insert(f.name.clone(), InputValue::Text(levels[mode].clone()));
                }
            }
        }
        Ok(ModelArtifact {
            version: ARTIFACT_VERSION,
            model,
            spec,
            features: train.features.clone(),
            design,
            normalization: stats,
            donors,
            knn_k: opts.knn_k,
            background,
            horizon_days: opts.horizon_days,
            output: ModelOutput::Probability { horizon: opts.horizon_days },
            shap: ShapOptions { seed: opts.seed, ..ShapOptions::default() },
            train_risk_median,
            defaults,
            observed_ranges,
            summary: TrainingSummary {
                n_train: train.n_rows(),
                n_events: train.n_events(),
                cv_cindex,
                seed: opts.seed,
            },
            thresholds: Vec::new(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: ModelArtifact = serde_json::from_str(text)?;
        if a.version != ARTIFACT_VERSION {
            return Err(Error::Schema(format!(
                "artifact version {} is not supported (expected {ARTIFACT_VERSION})",
                a.version
            )));
        }
        Ok(a)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn design_names(&self) -> Vec<String> {
        self.design.iter().map(|d| d.name.clone()).collect()
    }

    /// Validates and encodes one patient into a model design row.
    pub fn encode(&self, input: &PatientInput) -> std::result::Result<EncodedPatient, InputRejection> {
        let mut errors = Vec::new();
        let mut warnings = Vec::new();
        let mut hard = false;
        for key in input.keys() {
            if !self.features.iter().any(|f| &f.name == key) {
                errors.push(FieldIssue::new(key, "unknown feature"));
            }
        }
        let mut cells: Vec<Option<f64>> = Vec::with_capacity(self.features.len());
        let mut imputed = Vec::new();
        for f in &self.features {
            let v = input.get(&f.name).and_then(|v| v.as_ref());
            let cell = match (v, &f.kind) {
                (None, _) => {
                    if f.required {
                        errors.push(FieldIssue::new(&f.name, "required feature is missing"));
                    } else {
                        imputed.push(f.name.clone());
                    }
                    None
                }
                (Some(InputValue::Number(x)), FeatureKind::Continuous) => {
                    if !x.is_finite() {
                        errors.push(FieldIssue::new(&f.name, "value must be a finite number"));
                        None
                    } else {
                        let z = self.normalization.to_z(&f.name, *x);
                        if z.abs() > HARD_Z_LIMIT {
                            hard = true;
                            errors.push(FieldIssue::new(
                                &f.name,
                                &format!("value {} is more than {HARD_Z_LIMIT} training SDs from the mean", format_number(*x)),
                            ));
                        } else if let Some([lo, hi]) = f.plausible_range {
                            if *x < lo || *x > hi {
                                warnings.push(FieldIssue::new(
                                    &f.name,
                                    &format!("value {} outside plausible range [{lo}, {hi}]", format_number(*x)),
                                ));
                            }
                        } else if let Some([lo, hi]) = self.observed_ranges.get(&f.name) {
                            if x < lo || x > hi {
                                warnings.push(FieldIssue::new(&f.name, "value outside the training range"));
                            }
                        }
                        Some(z)
                    }
                }
                (Some(InputValue::Text(s)), FeatureKind::Categorical { levels }) => {
                    match levels.iter().position(|l| l == s) {
                        Some(l) => Some(l as f64),
                        None => {
                            errors.push(FieldIssue::new(&f.name, &format!("unknown level {s:?}; expected one of {levels:?}")));
                            None
                        }
                    }
                }
                (Some(_), FeatureKind::Continuous) => {
                    errors.push(FieldIssue::new(&f.name, "expected a number"));
                    None
                }
                (Some(_), FeatureKind::Categorical { .. }) => {
                    errors.push(FieldIssue::new(&f.name, "expected a level name"));
                    None
                }
            };
            cells.push(cell);
        }
        if !errors.is_empty() {
            return Err(InputRejection { hard, errors });
        }
        for (c, f) in self.features.iter().enumerate() {
            if cells[c].is_none() && f.is_categorical() {
                if let Some(InputValue::Text(mode)) = self.defaults.get(&f.name) {
                    cells[c] = f.levels().iter().position(|l| l == mode).map(|l| l as f64);
                }
            }
        }
        let one = Cohort::new(self.features.clone(), vec![cells], vec![SurvivalOutcome::censored(1.0)])
            .map_err(|e| InputRejection::internal(e.to_string()))?;
        let (filled, _) = knn_impute_from(&one, &self.donors, self.knn_k)
            .map_err(|e| InputRejection::internal(e.to_string()))?;
        let (x, _) = filled.design_matrix();
        let row = x.row(0).to_vec();
        let display = self.display_values(&row);
        Ok(EncodedPatient { row, display, imputed, warnings })
    }

    fn output(&self, x: &[f64]) -> Result<f64> {
        output_fn(&self.model, self.output)(x)
    }

    pub fn predict_encoded(&self, enc: &EncodedPatient) -> Result<PredictionResponse> {
        let pred = self.model.predict(&enc.row)?;
        let s_h = pred.curve.eval(self.horizon_days);
        Ok(PredictionResponse {
            risk: pred.risk,
            probability: 1.0 - s_h,
            horizon_days: self.horizon_days,
            risk_group: if pred.risk > self.train_risk_median { RiskGroup::High } else { RiskGroup::Low },
            survival_curve: pred
                .curve
                .export()
                .points
                .into_iter()
                .map(|p| CurvePoint { std_err: None, ..p })
                .collect(),
            imputed: enc.imputed.clone(),
            warnings: enc.warnings.clone(),
        })
    }

    pub fn predict(&self, input: &PatientInput) -> std::result::Result<PredictionResponse, ServeError> {
        let enc = self.encode(input)?;
        Ok(self.predict_encoded(&enc)?)
    }

    /// Wraps an already normalized, fully observed design row.
    pub fn encoded_row(&self, row: Vec<f64>) -> Result<EncodedPatient> {
        if row.len() != self.design.len() {
            return Err(Error::DimensionMismatch { expected: self.design.len(), got: row.len() });
        }
        let display = self.display_values(&row);
        Ok(EncodedPatient { row, display, imputed: Vec::new(), warnings: Vec::new() })
    }

    fn display_values(&self, row: &[f64]) -> Vec<f64> {
        self.design
            .iter()
            .zip(row)
            .map(|(d, &v)| match d.level {
                Some(_) => v,
                None => self.normalization.to_original(&self.features[d.source].name, v),
            })
            .collect()
    }

    pub fn explain_encoded(&self, enc: &EncodedPatient) -> Result<ExplanationResponse> {
        let f = |x: &[f64]| self.output(x);
        let e = kernel_shap(&f, &enc.row, &self.background, &self.shap)?;
        let names = self.design_names();
        let waterfall = waterfall_data(&e, &names, &enc.display)?;
        Ok(ExplanationResponse {
            base: e.base_value,
            prediction: e.prediction,
            horizon_days: self.horizon_days,
            output: self.output,
            phi: names
                .iter()
                .zip(&enc.display)
                .zip(&e.phi)
                .map(|((n, &v), &p)| PhiEntry { feature: n.clone(), value_original_scale: v, phi: p })
                .collect(),
            waterfall,
            imputed: enc.imputed.clone(),
            warnings: enc.warnings.clone(),
        })
    }

    pub fn explain(&self, input: &PatientInput) -> std::result::Result<ExplanationResponse, ServeError> {
        let enc = self.encode(input)?;
        Ok(self.explain_encoded(&enc)?)
    }

    pub fn whatif(&self, req: &WhatIfRequest) -> std::result::Result<WhatIfResponse, ServeError> {
        let unknown: Vec<FieldIssue> = req
            .overrides
            .iter()
            .filter(|o| !self.features.iter().any(|f| f.name == o.feature))
            .map(|o| FieldIssue::new(&o.feature, "override names an unknown feature"))
            .collect();
        if !unknown.is_empty() {
            return Err(InputRejection { hard: false, errors: unknown }.into());
        }
        let base = self.predict(&req.base)?;
        let mut results = Vec::with_capacity(req.overrides.len());
        for o in &req.overrides {
            let mut input = req.base.clone();
            input.insert(o.feature.clone(), o.value.clone());
            let p = self.predict(&input)?;
            results.push(WhatIfResult {
                feature: o.feature.clone(),
                value: o.value.clone(),
                delta_probability: p.probability - base.probability,
                delta_risk: p.risk - base.risk,
                result: p,
            });
        }
        Ok(WhatIfResponse { base, results })
    }

    pub fn metadata(&self) -> ModelMetadata {
        let kind = self.model.kind();
        ModelMetadata {
            model_kind: kind.name().to_string(),
            display_name: kind.display_name().to_string(),
            artifact_version: self.version,
            horizon_days: self.horizon_days,
            output: self.output,
            features: self
                .features
                .iter()
                .map(|f| FeatureMeta {
                    name: f.name.clone(),
                    kind: if f.is_categorical() { "categorical" } else { "continuous" }.into(),
                    levels: f.levels().to_vec(),
                    unit: f.unit.clone(),
                    required: f.required,
                    plausible_range: f.plausible_range,
                    observed_range: self.observed_ranges.get(&f.name).copied(),
                    default: self.defaults.get(&f.name).cloned(),
                })
                .collect(),
            design_columns: self.design_names(),
            training: self.summary.clone(),
            thresholds: self.thresholds.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputValue {
    Number(f64),
    Text(String),
}

/// Feature name → original-scale value; `null` or absent means unknown.
pub type PatientInput = BTreeMap<String, Option<InputValue>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldIssue {
    pub feature: String,
    pub message: String,
}

impl FieldIssue {
    fn new(feature: &str, message: &str) -> Self {
        FieldIssue { feature: feature.to_string(), message: message.to_string() }
    }
}

/// Input validation failure. `hard` marks out-of-range violations (HTTP 422);
/// everything else is a malformed request (HTTP 400).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRejection {
    pub hard: bool,
    pub errors: Vec<FieldIssue>,
}

impl InputRejection {
    fn internal(msg: String) -> Self {
        InputRejection { hard: false, errors: vec![FieldIssue { feature: String::new(), message: msg }] }
    }
}

impl std::fmt::Display for InputRejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.errors.iter().map(|e| format!("{}: {}", e.feature, e.message)).collect();
        write!(f, "invalid input: {}", parts.join("; "))
    }
}

#[derive(Debug)]
pub enum ServeError {
    Input(InputRejection),
    Model(Error),
}

impl From<InputRejection> for ServeError {
    fn from(e: InputRejection) -> Self {
        ServeError::Input(e)
    }
}

impl From<Error> for ServeError {
    fn from(e: Error) -> Self {
        ServeError::Model(e)
    }
}

impl std::fmt::Display for ServeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ServeError::Input(e) => e.fmt(f),
            ServeError::Model(e) => e.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPatient {
    pub row: Vec<f64>,
    /// Per design column: original-scale value, or the 0/1 indicator.
    pub display: Vec<f64>,
    pub imputed: Vec<String>,
    pub warnings: Vec<FieldIssue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskGroup {
    Low,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResponse {
    pub risk: f64,
    /// Mortality probability by the horizon, `1 − S(horizon | x)`.
    pub probability: f64,
    pub horizon_days: f64,
    pub risk_group: RiskGroup,
    pub survival_curve: Vec<CurvePoint>,
    pub imputed: Vec<String>,
    pub warnings: Vec<FieldIssue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiEntry {
    pub feature: String,
    pub value_original_scale: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationResponse {
    pub base: f64,
    pub phi: Vec<PhiEntry>,
    pub prediction: f64,
    pub horizon_days: f64,
    pub output: ModelOutput,
    pub waterfall: Waterfall,
    pub imputed: Vec<String>,
    pub warnings: Vec<FieldIssue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Override {
    pub feature: String,
    pub value: Option<InputValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfRequest {
    pub base: PatientInput,
    #[serde(default)]
    pub overrides: Vec<Override>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResult {
    pub feature: String,
    pub value: Option<InputValue>,
    pub result: PredictionResponse,
    pub delta_probability: f64,
    pub delta_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResponse {
    pub base: PredictionResponse,
    pub results: Vec<WhatIfResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    pub kind: String,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub levels: Vec<String>,
    pub unit: Option<String>,
    pub required: bool,
    pub plausible_range: Option<[f64; 2]>,
    pub observed_range: Option<[f64; 2]>,
    pub default: Option<InputValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub model_kind: String,
    pub display_name: String,
    pub artifact_version: u32,
    pub horizon_days: f64,
    pub output: ModelOutput,
    pub features: Vec<FeatureMeta>,
    pub design_columns: Vec<String>,
    pub training: TrainingSummary,
    pub thresholds: Vec<FeatureThreshold>,
}

/// Design-space rows of `cohort` (already normalized and imputed) for the
/// given feature subset, with column descriptors.
pub fn subset_design(cohort: &Cohort, features: &[String]) -> Result<(Cohort, Matrix<f64>, Vec<DesignColumn>)> {
    let cols: Vec<usize> = features
        .iter()
        .map(|f| cohort.feature_index(f).ok_or_else(|| Error::UnknownFeature(f.clone())))
        .collect::<Result<_>>()?;
    let sub = cohort.select_features(&cols);
    let (x, d) = sub.design_matrix();
    debug_assert_eq!(d, design_columns(&sub.features));
    Ok((sub, x, d))
}
