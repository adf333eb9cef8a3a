//! Cohort ingestion and the fixed-order preprocessing pipeline.
//!
//! Categorical cells are stored as level indices; missing cells carry NaN in
//! the value buffer and `true` in the mask.

mod baseline;
mod preprocess;

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::survcore::SurvivalOutcome;

pub use baseline::{baseline_group_comparison, BaselineRow, BaselineTable, BaselineTest};
pub use preprocess::{
    apply_normalizer, drop_incomplete_samples, drop_sparse_features, fit_normalizer, knn_impute,
    knn_impute_from, preprocess, stratified_split, FeatureStat, ImputationReport, NormalizationStats,
    PreprocessConfig, Preprocessed, SampleRemovalReport, SparseRemovalReport, SplitIndices,
};

pub const TIME_COLUMN: &str = "time_days";
pub const EVENT_COLUMN: &str = "event";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    /// A missing value disqualifies the sample.
    #[serde(default)]
    pub required: bool,
    /// Soft plausibility bounds on the original scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plausible_range: Option<[f64; 2]>,
}

impl FeatureSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Continuous,
            unit: None,
            required: false,
            plausible_range: None,
        }
    }

    pub fn categorical(name: impl Into<String>, levels: &[&str]) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Categorical {
                levels: levels.iter().map(|s| s.to_string()).collect(),
            },
            unit: None,
            required: false,
            plausible_range: None,
        }
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.unit = Some(unit.into());
        self
    }

    pub fn required(mut self) -> Self {
        self.required = true;
        self
    }

    pub fn with_range(mut self, lo: f64, hi: f64) -> Self {
        self.plausible_range = Some([lo, hi]);
        self
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, FeatureKind::Categorical { .. })
    }

    pub fn levels(&self) -> &[String] {
        match &self.kind {
            FeatureKind::Categorical { levels } => levels,
            FeatureKind::Continuous => &[],
        }
    }
}

/// JSON schema sidecar listing the cohort's features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<FeatureSpec>,
}

impl Schema {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name `{}`", f.name)));
            }
            if f.name == TIME_COLUMN || f.name == EVENT_COLUMN {
                return Err(Error::Schema(format!("`{}` is reserved", f.name)));
            }
            if let FeatureKind::Categorical { levels } = &f.kind {
                if levels.is_empty() {
                    return Err(Error::Schema(format!("categorical `{}` has no levels", f.name)));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let schema: Schema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "CohortRepr", try_from = "CohortRepr")]
pub struct Cohort {
    pub features: Vec<FeatureSpec>,
    values: Vec<f64>,
    missing: Vec<bool>,
    pub outcomes: Vec<SurvivalOutcome<f64>>,
    /// Original data-row index (0-based) of each patient.
    pub row_ids: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CohortRepr {
    features: Vec<FeatureSpec>,
    rows: Vec<Vec<Option<f64>>>,
    outcomes: Vec<SurvivalOutcome<f64>>,
    row_ids: Vec<usize>,
}

impl From<Cohort> for CohortRepr {
    fn from(c: Cohort) -> Self {
        let rows = (0..c.n_rows())
            .map(|r| (0..c.n_features()).map(|j| c.value(r, j)).collect())
            .collect();
        CohortRepr {
            features: c.features,
            rows,
            outcomes: c.outcomes,
            row_ids: c.row_ids,
        }
    }
}

impl TryFrom<CohortRepr> for Cohort {
    type Error = Error;

    fn try_from(r: CohortRepr) -> Result<Self> {
        if r.row_ids.len() != r.rows.len() {
            return Err(Error::DimensionMismatch {
                expected: r.rows.len(),
                got: r.row_ids.len(),
            });
        }
        let mut c = Cohort::new(r.features, r.rows, r.outcomes)?;
        c.row_ids = r.row_ids;
        Ok(c)
    }
}

impl PartialEq for Cohort {
    fn eq(&self, other: &Self) -> bool {
        self.features == other.features
            && self.outcomes == other.outcomes
            && self.row_ids == other.row_ids
            && self.missing == other.missing
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.missing)
                .all(|((a, b), &m)| m || a == b)
    }
}

impl Cohort {
    /// Builds a cohort from per-row cells; `None` marks a missing cell.
    /// Categorical cells hold level indices.
    pub fn new(
        features: Vec<FeatureSpec>,
        rows: Vec<Vec<Option<f64>>>,
        outcomes: Vec<SurvivalOutcome<f64>>,
    ) -> Result<Self> {
        let p = features.len();
        if rows.len() != outcomes.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: outcomes.len(),
            });
        }
        let mut values = Vec::with_capacity(rows.len() * p);
        let mut missing = Vec::with_capacity(rows.len() * p);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::MalformedRow {
                    row: r + 1,
                    reason: format!("expected {p} cells, found {}", row.len()),
                });
            }
            for (c, cell) in row.iter().enumerate() {
                if let (Some(v), FeatureKind::Categorical { levels }) = (cell, &features[c].kind) {
                    if v.fract() != 0.0 || *v < 0.0 || *v as usize >= levels.len() {
                        return Err(Error::UnknownLevel {
                            feature: features[c].name.clone(),
                            value: v.to_string(),
                            row: r + 1,
                        });
                    }
                }
                values.push(cell.unwrap_or(f64::NAN));
                missing.push(cell.is_none());
            }
        }
        let n = rows.len();
        Ok(Cohort {
            features,
            values,
            missing,
            outcomes,
            row_ids: (0..n).collect(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.outcomes.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    #[inline]
    pub fn is_missing(&self, r: usize, c: usize) -> bool {
        self.missing[r * self.features.len() + c]
    }

    #[inline]
    pub fn value(&self, r: usize, c: usize) -> Option<f64> {
        let i = r * self.features.len() + c;
        (!self.missing[i]).then_some(self.values[i])
    }

    #[inline]
    pub(crate) fn raw(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.features.len() + c]
    }

    pub(crate) fn set(&mut self, r: usize, c: usize, v: Option<f64>) {
        let i = r * self.features.len() + c;
        self.values[i] = v.unwrap_or(f64::NAN);
        self.missing[i] = v.is_none();
    }

    pub fn missing_count(&self, c: usize) -> usize {
        (0..self.n_rows()).filter(|&r| self.is_missing(r, c)).count()
    }

    pub fn total_missing(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn n_events(&self) -> usize {
        self.outcomes.iter().filter(|o| o.event).count()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Cohort {
        let p = self.features.len();
        let mut values = Vec::with_capacity(idx.len() * p);
        let mut missing = Vec::with_capacity(idx.len() * p);
        for &r in idx {
            values.extend_from_slice(&self.values[r * p..(r + 1) * p]);
            missing.extend_from_slice(&self.missing[r * p..(r + 1) * p]);
        }
        Cohort {
            features: self.features.clone(),
            values,
            missing,
            outcomes: idx.iter().map(|&r| self.outcomes[r]).collect(),
            row_ids: idx.iter().map(|&r| self.row_ids[r]).collect(),
        }
    }

    pub fn select_features(&self, cols: &[usize]) -> Cohort {
        let p = self.features.len();
        let n = self.n_rows();
        let mut values = Vec::with_capacity(n * cols.len());
        let mut missing = Vec::with_capacity(n * cols.len());
        for r in 0..n {
            for &c in cols {
                values.push(self.values[r * p + c]);
                missing.push(self.missing[r * p + c]);
            }
        }
        Cohort {
            features: cols.iter().map(|&c| self.features[c].clone()).collect(),
            values,
            missing,
            outcomes: self.outcomes.clone(),
            row_ids: self.row_ids.clone(),
        }
    }

    /// Model design matrix: continuous features as-is, categorical features
    /// one-hot encoded without their first level. Missing cells become NaN.
    pub fn design_matrix(&self) -> (Matrix<f64>, Vec<DesignColumn>) {
        let columns = design_columns(&self.features);
        let mut m = Matrix::zeros(self.n_rows(), columns.len());
        for r in 0..self.n_rows() {
            for (j, col) in columns.iter().enumerate() {
                let v = self.raw(r, col.source);
                let out = match col.level {
                    None => v,
                    Some(_) if v.is_nan() => f64::NAN,
                    Some(level) => f64::from(v as usize == level),
                };
                m.set(r, j, out);
            }
        }
        (m, columns)
    }

    /// Parses a cohort CSV whose header must contain every schema feature plus
    /// `time_days` and `event`. Empty cells are missing.
    pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Cohort> {
        schema.validate()?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        let pos = |name: &str| -> Result<usize> {
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Schema(format!("column `{name}` missing from header")))
        };
        let feature_cols: Vec<usize> = schema
            .features
            .iter()
            .map(|f| pos(&f.name))
            .collect::<Result<_>>()?;
        let time_col = pos(TIME_COLUMN)?;
        let event_col = pos(EVENT_COLUMN)?;
        if header.len() != schema.features.len() + 2 {
            let known: std::collections::HashSet<&str> = schema
                .features
                .iter()
                .map(|f| f.name.as_str())
                .chain([TIME_COLUMN, EVENT_COLUMN])
                .collect();
            let extra: Vec<&str> = header.iter().filter(|h| !known.contains(h.trim())).collect();
            return Err(Error::Schema(format!("header has columns not in schema: {extra:?}")));
        }

        let mut rows = Vec::new();
        let mut outcomes = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row_no = i + 1;
            let rec = rec.map_err(|e| Error::MalformedRow {
                row: row_no,
                reason: e.to_string(),
            })?;
            if rec.len() != header.len() {
                return Err(Error::MalformedRow {
                    row: row_no,
                    reason: format!("expected {} fields, found {}", header.len(), rec.len()),
                });
            }
            let time_s = rec[time_col].trim();
            let time: f64 = if time_s.is_empty() {
                return Err(Error::InvalidSurvivalTime {
                    row: row_no,
                    reason: "missing".into(),
                });
            } else {
                time_s.parse().map_err(|_| Error::InvalidSurvivalTime {
                    row: row_no,
                    reason: format!("`{time_s}` is not a number"),
                })?
            };
            if !(time > 0.0) || !time.is_finite() {
                return Err(Error::InvalidSurvivalTime {
                    row: row_no,
                    reason: format!("time_days = {time_s} must be positive"),
                });
            }
            let event = match rec[event_col].trim() {
                "1" | "true" => true,
                "0" | "false" => false,
                other => {
                    return Err(Error::MalformedRow {
                        row: row_no,
                        reason: format!("event flag `{other}` must be 0 or 1"),
                    })
                }
            };
            let mut cells = Vec::with_capacity(feature_cols.len());
            for (spec, &col) in schema.features.iter().zip(&feature_cols) {
                let s = rec[col].trim();
                if s.is_empty() {
                    cells.push(None);
                    continue;
                }
                let v = match &spec.kind {
                    FeatureKind::Continuous => s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(
                        || Error::MalformedRow {
                            row: row_no,
                            reason: format!("`{s}` is not a number for `{}`", spec.name),
                        },
                    )?,
                    FeatureKind::Categorical { levels } => levels
                        .iter()
                        .position(|l| l == s)
                        .ok_or_else(|| Error::UnknownLevel {
                            feature: spec.name.clone(),
                            value: s.to_string(),
                            row: row_no,
                        })? as f64,
                };
                cells.push(Some(v));
            }
            rows.push(cells);
            outcomes.push(SurvivalOutcome::new(time, event));
        }
        Cohort::new(schema.features.clone(), rows, outcomes)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = self.feature_names();
        header.push(TIME_COLUMN.into());
        header.push(EVENT_COLUMN.into());
        w.write_record(&header)?;
        for r in 0..self.n_rows() {
            let mut rec: Vec<String> = Vec::with_capacity(header.len());
            for (c, f) in self.features.iter().enumerate() {
                rec.push(match (self.value(r, c), &f.kind) {
                    (None, _) => String::new(),
                    (Some(v), FeatureKind::Continuous) => format_number(v),
                    (Some(v), FeatureKind::Categorical { levels }) => levels[v as usize].clone(),
                });
            }
            rec.push(format_number(self.outcomes[r].time));
            rec.push(if self.outcomes[r].event { "1" } else { "0" }.into());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<csv writer>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn schema(&self) -> Schema {
        Schema {
            features: self.features.clone(),
        }
    }
}

pub(crate) fn format_number(v: f64) -> String {
    format!("{v}")
}

/// One column of the model design matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignColumn {
    pub name: String,
    /// Index of the source feature in the cohort.
    pub source: usize,
    /// Categorical level this indicator encodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
}

pub fn design_columns(features: &[FeatureSpec]) -> Vec<DesignColumn> {
    let mut cols = Vec::new();
    for (i, f) in features.iter().enumerate() {
        match &f.kind {
            FeatureKind::Continuous => cols.push(DesignColumn {
                name: f.name.clone(),
                source: i,
                level: None,
            }),
            FeatureKind::Categorical { levels } => {
                for (l, name) in levels.iter().enumerate().skip(1) {
                    cols.push(DesignColumn {
                        name: format!("{}={}", f.name, name),
                        source: i,
                        level: Some(l),
                    });
                }
            }
        }
    }
    cols
}

pub fn load_cohort(path: impl AsRef<Path>, schema: &Schema) -> Result<Cohort> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Cohort::read_csv(std::io::BufReader::new(file), schema)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema {
            features: vec![
                FeatureSpec::continuous("age").required(),
                FeatureSpec::categorical("sex", &["male", "female"]).required(),
                FeatureSpec::continuous("crp"),
            ],
        }
    }

    const GOOD: &str = "age,sex,crp,time_days,event\n\
        60,male,1.5,100,1\n\
        70,female,,200,0\n\
        55,male,2.0,300,1\n\
        ,female,0.4,150,0\n\
        66,female,3.1,50,1\n";

    #[test]
    fn parses_well_formed_file() {
        let c = Cohort::read_csv(GOOD.as_bytes(), &schema()).unwrap();
        assert_eq!(c.n_rows(), 5);
        assert_eq!(c.n_features(), 3);
        assert!(c.is_missing(1, 2));
        assert!(c.is_missing(3, 0));
        assert_eq!(c.total_missing(), 2);
        assert_eq!(c.value(1, 1), Some(1.0));
        assert_eq!(c.n_events(), 3);
    }

    #[test]
    fn zero_time_names_row() {
        let bad = "age,sex,crp,time_days,event\n60,male,1,5,1\n61,male,1,5,0\n62,male,1,0,1\n";
        match Cohort::read_csv(bad.as_bytes(), &schema()) {
            Err(Error::InvalidSurvivalTime { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_level_rejected() {
        let bad = "age,sex,crp,time_days,event\n60,other,1,5,1\n";
        assert!(matches!(
            Cohort::read_csv(bad.as_bytes(), &schema()),
            Err(Error::UnknownLevel { row: 1, .. })
        ));
    }

    #[test]
    fn malformed_row_reports_number() {
        let bad = "age,sex,crp,time_days,event\n60,male,1,5,1\n60,male,abc,5,1\n";
        assert!(matches!(
            Cohort::read_csv(bad.as_bytes(), &schema()),
            Err(Error::MalformedRow { row: 2, .. })
        ));
    }

    #[test]
    fn header_mismatch_rejected() {
        let bad = "age,crp,time_days,event\n60,1,5,1\n";
        assert!(matches!(Cohort::read_csv(bad.as_bytes(), &schema()), Err(Error::Schema(_))));
    }

    #[test]
    fn csv_round_trip_is_byte_stable() {
        let c = Cohort::read_csv(GOOD.as_bytes(), &schema()).unwrap();
        let mut out = Vec::new();
        c.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out.clone()).unwrap(), GOOD.replace(",2.0,", ",2,"));
        let again = Cohort::read_csv(out.as_slice(), &schema()).unwrap();
        assert_eq!(again, c);
        let mut out2 = Vec::new();
        again.write_csv(&mut out2).unwrap();
        assert_eq!(out, out2);
    }

    #[test]
    fn one_hot_drops_first_level() {
        let c = Cohort::read_csv(GOOD.as_bytes(), &schema()).unwrap();
        let (m, cols) = c.design_matrix();
        let names: Vec<_> = cols.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["age", "sex=female", "crp"]);
        assert_eq!(m.get(1, 1), 1.0);
        assert_eq!(m.get(0, 1), 0.0);
    }

    #[test]
    fn duplicate_schema_names_rejected() {
        let s = Schema {
            features: vec![FeatureSpec::continuous("a"), FeatureSpec::continuous("a")],
        };
        assert!(s.validate().is_err());
    }
}
