//! The in-scope survival models behind one prediction contract: a scalar risk
//! score (higher means greater predicted hazard) plus a survival curve.

pub mod cox;
pub mod forest;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::matrix::Matrix;
use crate::num::Real;
use crate::survcore::{SurvivalCurve, SurvivalOutcome};

pub use cox::{fit_cox_ridge, fit_cox_ridge_with, CoxObjective, CoxOptions, CoxRidgeModel};
pub use forest::{fit_forest, ForestKind, ForestModel, ForestParams, SurvivalTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cox,
    Rsf,
    Est,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Cox, ModelKind::Rsf, ModelKind::Est];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Cox => "cox",
            ModelKind::Rsf => "rsf",
            ModelKind::Est => "est",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Cox => "CoxPH",
            ModelKind::Rsf => "RSF",
            ModelKind::Est => "EST",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cox" | "coxph" | "cox-ridge" => Some(ModelKind::Cox),
            "rsf" => Some(ModelKind::Rsf),
            "est" => Some(ModelKind::Est),
            _ => None,
        }
    }

    pub fn forest_kind(self) -> Option<ForestKind> {
        match self {
            ModelKind::Cox => None,
            ModelKind::Rsf => Some(ForestKind::Rsf),
            ModelKind::Est => Some(ForestKind::Est),
        }
    }
}

/// A model family plus the hyperparameters needed to fit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelSpec {
    Cox { lambda: f64 },
    Rsf(ForestParams),
    Est(ForestParams),
}

impl ModelSpec {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Cox => ModelSpec::Cox { lambda: 1.0 },
            ModelKind::Rsf => ModelSpec::Rsf(ForestParams::default()),
            ModelKind::Est => ModelSpec::Est(ForestParams::default()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Cox { .. } => ModelKind::Cox,
            ModelSpec::Rsf(_) => ModelKind::Rsf,
            ModelSpec::Est(_) => ModelKind::Est,
        }
    }
}

pub fn fit_model<T: Real>(
    spec: &ModelSpec,
    x: &Matrix<T>,
    outcomes: &[SurvivalOutcome<T>],
    seed: u64,
) -> Result<FittedModel<T>> {
    Ok(match spec {
        ModelSpec::Cox { lambda } => FittedModel::Cox(fit_cox_ridge(x, outcomes, T::lit(*lambda))?),
        ModelSpec::Rsf(p) => FittedModel::Forest(fit_forest(x, outcomes, p, ForestKind::Rsf, seed)?),
        ModelSpec::Est(p) => FittedModel::Forest(fit_forest(x, outcomes, p, ForestKind::Est, seed)?),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub risk: T,
    pub curve: SurvivalCurve<T>,
}

pub trait SurvivalModel<T: Real>: Send + Sync {
    fn n_features(&self) -> usize;

    fn risk(&self, x: &[T]) -> Result<T>;

    fn predict(&self, x: &[T]) -> Result<Prediction<T>>;

    fn survival_at(&self, x: &[T], t: T) -> Result<T>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", tag = "type", rename_all = "lowercase")]
pub enum FittedModel<T> {
    Cox(CoxRidgeModel<T>),
    Forest(ForestModel<T>),
}

impl<T: Real> FittedModel<T> {
    pub fn kind(&self) -> ModelKind {
        match self {
            FittedModel::Cox(_) => ModelKind::Cox,
            FittedModel::Forest(f) => match f.kind {
                ForestKind::Rsf => ModelKind::Rsf,
                ForestKind::Est => ModelKind::Est,
            },
        }
    }
}

impl<T: Real> SurvivalModel<T> for CoxRidgeModel<T> {
    fn n_features(&self) -> usize {
        CoxRidgeModel::n_features(self)
    }

    fn risk(&self, x: &[T]) -> Result<T> {
        self.linear_predictor(x)
    }

    fn predict(&self, x: &[T]) -> Result<Prediction<T>> {
        let (risk, curve) = CoxRidgeModel::predict(self, x)?;
        Ok(Prediction { risk, curve })
    }

    fn survival_at(&self, x: &[T], t: T) -> Result<T> {
        CoxRidgeModel::survival_at(self, x, t)
    }
}

impl<T: Real> SurvivalModel<T> for ForestModel<T> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn risk(&self, x: &[T]) -> Result<T> {
        ForestModel::risk(self, x)
    }

    fn predict(&self, x: &[T]) -> Result<Prediction<T>> {
        let (risk, curve) = ForestModel::predict(self, x)?;
        Ok(Prediction { risk, curve })
    }

    fn survival_at(&self, x: &[T], t: T) -> Result<T> {
        ForestModel::survival_at(self, x, t)
    }
}

impl<T: Real> SurvivalModel<T> for FittedModel<T> {
    fn n_features(&self) -> usize {
        match self {
            FittedModel::Cox(m) => m.n_features(),
            FittedModel::Forest(m) => m.n_features,
        }
    }

    fn risk(&self, x: &[T]) -> Result<T> {
        match self {
            FittedModel::Cox(m) => SurvivalModel::risk(m, x),
            FittedModel::Forest(m) => SurvivalModel::risk(m, x),
        }
    }

    fn predict(&self, x: &[T]) -> Result<Prediction<T>> {
        match self {
            FittedModel::Cox(m) => SurvivalModel::predict(m, x),
            FittedModel::Forest(m) => SurvivalModel::predict(m, x),
        }
    }

    fn survival_at(&self, x: &[T], t: T) -> Result<T> {
        match self {
            FittedModel::Cox(m) => SurvivalModel::survival_at(m, x, t),
            FittedModel::Forest(m) => SurvivalModel::survival_at(m, x, t),
        }
    }
}

/// Row-wise prediction; the first failing row aborts with its index.
pub fn predict_batch<T: Real, M: SurvivalModel<T> + ?Sized>(
    model: &M,
    x: &Matrix<T>,
) -> Result<Vec<Prediction<T>>> {
    x.rows()
        .enumerate()
        .map(|(i, row)| model.predict(row).map_err(|e| e.at_row(i)))
        .collect()
}

pub fn risk_batch<T: Real, M: SurvivalModel<T> + ?Sized>(model: &M, x: &Matrix<T>) -> Result<Vec<T>> {
    x.rows()
        .enumerate()
        .map(|(i, row)| model.risk(row).map_err(|e| e.at_row(i)))
        .collect()
}
