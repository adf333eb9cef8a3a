pub mod artifact;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod featselect;
pub mod linalg;
pub mod matrix;
pub mod metrics;
pub mod models;
pub mod num;
pub mod report;
pub mod stats;
pub mod survcore;
pub mod synth;
pub mod tune;

pub use error::{Error, Result};
pub use num::Real;

pub type Outcome = survcore::SurvivalOutcome<f64>;
pub type Curve = survcore::SurvivalCurve<f64>;
pub type Step = survcore::StepFunction<f64>;
pub type DenseMatrix = matrix::Matrix<f64>;
pub type Model = models::FittedModel<f64>;
pub type CoxModel = models::cox::CoxRidgeModel<f64>;
pub type Forest = models::forest::ForestModel<f64>;
pub type Explanation = explain::ShapExplanation<f64>;

pub type Outcome32 = survcore::SurvivalOutcome<f32>;
pub type Curve32 = survcore::SurvivalCurve<f32>;
pub type DenseMatrix32 = matrix::Matrix<f32>;
pub type Model32 = models::FittedModel<f32>;
