//! Table-1 style evaluation reports and their plot-data exports.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::risk_group_analysis;
use crate::matrix::Matrix;
use crate::metrics::{brier_ibs, event_time_grid, harrell_cindex, time_dependent_auc, BrierResult, TimeAuc};
use crate::models::{predict_batch, risk_batch, FittedModel};
use crate::survcore::{censoring_distribution, CurveExport, LogRankResult, SurvivalOutcome};

pub const DAYS_PER_YEAR: f64 = 365.25;

/// Reporting times: 5, 10 and 15 years plus the study horizon.
pub fn standard_eval_times(horizon_days: f64) -> Vec<(String, f64)> {
    vec![
        ("5y".into(), 5.0 * DAYS_PER_YEAR),
        ("10y".into(), 10.0 * DAYS_PER_YEAR),
        ("15y".into(), 15.0 * DAYS_PER_YEAR),
        (format!("{:.1}y", horizon_days / DAYS_PER_YEAR), horizon_days),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub horizon_days: f64,
    pub times: Vec<(String, f64)>,
}

impl EvalOptions {
    pub fn new(horizon_days: f64) -> Self {
        EvalOptions { horizon_days, times: standard_eval_times(horizon_days) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucAt {
    pub label: String,
    pub t_requested: f64,
    /// Requested time clamped into the evaluation grid.
    pub t_used: f64,
    pub auc: Option<f64>,
    pub n_cases: usize,
    pub n_controls: usize,
}

/// One Table-1 row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub n_features: usize,
    pub features: Vec<String>,
    pub c_cv: Option<f64>,
    pub c_train: f64,
    pub c_test: f64,
    pub auc: Vec<AucAt>,
    pub ibs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskGroupReport {
    pub cut: f64,
    pub n_low: usize,
    pub n_high: usize,
    pub low_km: Option<CurveExport>,
    pub high_km: Option<CurveExport>,
    pub log_rank: Option<LogRankResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: ModelReport,
    pub auc_curve: Vec<TimeAuc<f64>>,
    pub brier: Option<BrierResult<f64>>,
    /// Test patients split at the training median risk.
    pub risk_groups: RiskGroupReport,
    /// Training patients split at the same cut.
    pub risk_groups_train: RiskGroupReport,
}

fn risk_groups(train_risks: &[f64], eval_risks: &[f64], eval: &[SurvivalOutcome<f64>]) -> Result<RiskGroupReport> {
    let rg = risk_group_analysis(train_risks, eval_risks, eval)?;
    let n_high = rg.high_risk.iter().filter(|&&h| h).count();
    Ok(RiskGroupReport {
        cut: rg.cut,
        n_low: rg.high_risk.len() - n_high,
        n_high,
        low_km: rg.low_curve.map(|c| c.export()),
        high_km: rg.high_curve.map(|c| c.export()),
        log_rank: rg.log_rank,
    })
}

/// Training event times within `[first, last]` training event, capped at
/// the horizon and kept where the test censoring distribution is positive.
pub fn evaluation_grid(
    train: &[SurvivalOutcome<f64>],
    test: &[SurvivalOutcome<f64>],
    horizon: f64,
) -> Vec<f64> {
    let g = censoring_distribution(test);
    let t_max = test.iter().map(|o| o.time).fold(f64::NEG_INFINITY, f64::max);
    event_time_grid(train, None, Some(horizon))
        .into_iter()
        .filter(|&t| t < t_max && g.eval(t) > 0.0)
        .collect()
}

/// Everything but survival-curve metrics, from risks alone.
pub struct RiskInputs<'a> {
    pub train_risks: &'a [f64],
    pub train: &'a [SurvivalOutcome<f64>],
    pub test_risks: &'a [f64],
    pub test: &'a [SurvivalOutcome<f64>],
}

pub fn evaluate_risks(
    name: &str,
    features: &[String],
    c_cv: Option<f64>,
    inputs: &RiskInputs,
    test_survival: Option<&dyn Fn(&[f64]) -> Result<Vec<Vec<f64>>>>,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    let c_train = harrell_cindex(inputs.train_risks, inputs.train)?.c_index;
    let c_test = harrell_cindex(inputs.test_risks, inputs.test)?.c_index;
    let grid = evaluation_grid(inputs.train, inputs.test, opts.horizon_days);
    if grid.is_empty() {
        return Err(Error::Degenerate("empty evaluation grid".into()));
    }
    let censor = censoring_distribution(inputs.test);
    let auc_curve: Vec<TimeAuc<f64>> = grid
        .iter()
        .map(|&t| time_dependent_auc(inputs.test_risks, inputs.test, t, &censor))
        .collect::<Result<_>>()?;
    let auc = opts
        .times
        .iter()
        .map(|(label, t)| {
            let k = grid.partition_point(|&g| g <= *t).max(1) - 1;
            let a = &auc_curve[k];
            AucAt {
                label: label.clone(),
                t_requested: *t,
                t_used: grid[k],
                auc: a.auc,
                n_cases: a.n_cases,
                n_controls: a.n_controls,
            }
        })
        .collect();
    let brier = match test_survival {
        Some(f) => Some(brier_ibs(&f(&grid)?, inputs.test, &grid, &censor)?),
        None => None,
    };
    Ok(Evaluation {
        report: ModelReport {
            model: name.to_string(),
            n_features: features.len(),
            features: features.to_vec(),
            c_cv,
            c_train,
            c_test,
            auc,
            ibs: brier.as_ref().map(|b| b.ibs),
        },
        auc_curve,
        brier,
        risk_groups: risk_groups(inputs.train_risks, inputs.test_risks, inputs.test)?,
        risk_groups_train: risk_groups(inputs.train_risks, inputs.train_risks, inputs.train)?,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_model(
    name: &str,
    features: &[String],
    model: &FittedModel<f64>,
    c_cv: Option<f64>,
    train_x: &Matrix<f64>,
    train: &[SurvivalOutcome<f64>],
    test_x: &Matrix<f64>,
    test: &[SurvivalOutcome<f64>],
    opts: &EvalOptions,
) -> Result<Evaluation> {
    let train_risks = risk_batch(model, train_x)?;
    let preds = predict_batch(model, test_x)?;
    let test_risks: Vec<f64> = preds.iter().map(|p| p.risk).collect();
    let survival = |grid: &[f64]| Ok(preds.iter().map(|p| p.curve.step.eval_many(grid)).collect());
    evaluate_risks(
        name,
        features,
        c_cv,
        &RiskInputs { train_risks: &train_risks, train, test_risks: &test_risks, test },
        Some(&survival),
        opts,
    )
}

/// Models ranked by CV C-index, descending; rows without one go last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1 {
    pub rows: Vec<ModelReport>,
}

impl Table1 {
    pub fn new(mut rows: Vec<ModelReport>) -> Self {
        rows.sort_by(|a, b| match (a.c_cv, b.c_cv) {
            (Some(x), Some(y)) => y.total_cmp(&x),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        });
        Table1 { rows }
    }

    pub fn is_sorted(&self) -> bool {
        self.rows.windows(2).all(|w| match (w[0].c_cv, w[1].c_cv) {
            (Some(a), Some(b)) => a >= b,
            (None, Some(_)) => false,
            _ => true,
        })
    }

    pub fn to_csv(&self) -> String {
        let labels: Vec<String> = self
            .rows
            .first()
            .map(|r| r.auc.iter().map(|a| format!("auc_{}", a.label)).collect())
            .unwrap_or_default();
        let mut out = String::from("model,n_features,c_cv,c_train,c_test");
        for l in &labels {
            out.push(',');
            out.push_str(l);
        }
        out.push_str(",ibs\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        for r in &self.rows {
            let _ = write!(out, "{},{},{},{:.4},{:.4}", r.model, r.n_features, opt(r.c_cv), r.c_train, r.c_test);
            for a in &r.auc {
                let _ = write!(out, ",{}", opt(a.auc));
            }
            let _ = writeln!(out, ",{}", opt(r.ibs));
        }
        out
    }
}

pub fn auc_curve_csv(curve: &[TimeAuc<f64>]) -> String {
    let mut out = String::from("t_days,auc,n_cases,n_controls\n");
    for a in curve {
        let auc = a.auc.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", a.t, auc, a.n_cases, a.n_controls);
    }
    out
}

pub fn km_groups_csv(groups: &RiskGroupReport) -> String {
    let mut out = String::from("group,t_days,survival,std_err\n");
    for (name, km) in [("low", &groups.low_km), ("high", &groups.high_km)] {
        for p in km.iter().flat_map(|k| &k.points) {
            let se = p.std_err.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{name},{},{},{se}", p.t, p.value);
        }
    }
    out
}
