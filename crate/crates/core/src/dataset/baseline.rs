use serde::{Deserialize, Serialize};

use super::{Cohort, FeatureKind};
use crate::error::{Error, Result};
use crate::stats::{benjamini_hochberg, chi_square_independence, mann_whitney_u};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineTest {
    MannWhitney,
    ChiSquare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub feature: String,
    pub test: BaselineTest,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub p_adjusted: Option<f64>,
    pub significant: bool,
    /// Set when the test could not run (e.g. an empty contingency row).
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineTable {
    pub alpha: f64,
    pub n_event: usize,
    pub n_no_event: usize,
    pub rows: Vec<BaselineRow>,
}

impl BaselineTable {
    pub fn n_significant(&self) -> usize {
        self.rows.iter().filter(|r| r.significant).count()
    }
}

/// Event vs no-event comparison of every feature on observed cells:
/// Mann-Whitney U for continuous, χ² for categorical, BH across all tests.
pub fn baseline_group_comparison(cohort: &Cohort) -> Result<BaselineTable> {
    let event: Vec<bool> = cohort.outcomes.iter().map(|o| o.event).collect();
    let n_event = event.iter().filter(|&&e| e).count();
    let n_no_event = event.len() - n_event;
    if n_event == 0 || n_no_event == 0 {
        return Err(Error::Degenerate(
            "baseline comparison needs both event and no-event patients".into(),
        ));
    }
    let mut rows = Vec::with_capacity(cohort.n_features());
    for (c, f) in cohort.features.iter().enumerate() {
        let row = match &f.kind {
            FeatureKind::Continuous => {
                let (mut a, mut b) = (Vec::new(), Vec::new());
                for (r, &e) in event.iter().enumerate() {
                    if let Some(v) = cohort.value(r, c) {
                        if e { a.push(v) } else { b.push(v) }
                    }
                }
                if a.is_empty() || b.is_empty() {
                    skipped(&f.name, BaselineTest::MannWhitney, "a group has no observed values")
                } else {
                    let mw = mann_whitney_u(&a, &b);
                    tested(&f.name, BaselineTest::MannWhitney, mw.u, mw.p_value)
                }
            }
            FeatureKind::Categorical { levels } => {
                let mut table = vec![vec![0.0; levels.len()]; 2];
                for (r, &e) in event.iter().enumerate() {
                    if let Some(v) = cohort.value(r, c) {
                        table[usize::from(!e)][v as usize] += 1.0;
                    }
                }
                // unobserved levels carry no information; drop their empty columns
                let used: Vec<usize> =
                    (0..levels.len()).filter(|&l| table[0][l] + table[1][l] > 0.0).collect();
                let reduced: Vec<Vec<f64>> =
                    table.iter().map(|row| used.iter().map(|&l| row[l]).collect()).collect();
                match chi_square_independence(&reduced) {
                    Some((stat, p, _)) => tested(&f.name, BaselineTest::ChiSquare, stat, p),
                    None => skipped(
                        &f.name,
                        BaselineTest::ChiSquare,
                        "contingency table has an all-zero row or a single level",
                    ),
                }
            }
        };
        rows.push(row);
    }
    let raw: Vec<f64> = rows.iter().map(|r| r.p_value.unwrap_or(f64::NAN)).collect();
    let adj = benjamini_hochberg(&raw);
    let alpha = 0.05;
    for (row, q) in rows.iter_mut().zip(adj) {
        if row.p_value.is_some() {
            row.p_adjusted = Some(q);
            row.significant = q < alpha;
        }
    }
    Ok(BaselineTable {
        alpha,
        n_event,
        n_no_event,
        rows,
    })
}

fn tested(name: &str, test: BaselineTest, stat: f64, p: f64) -> BaselineRow {
    BaselineRow {
        feature: name.to_string(),
        test,
        statistic: Some(stat),
        p_value: Some(p),
        p_adjusted: None,
        significant: false,
        skipped: None,
    }
}

fn skipped(name: &str, test: BaselineTest, why: &str) -> BaselineRow {
    BaselineRow {
        feature: name.to_string(),
        test,
        statistic: None,
        p_value: None,
        p_adjusted: None,
        significant: false,
        skipped: Some(why.to_string()),
    }
}
