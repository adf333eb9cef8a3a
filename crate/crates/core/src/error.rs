use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("unknown level `{value}` for categorical feature `{feature}` (row {row})")]
    UnknownLevel {
        feature: String,
        value: String,
        row: usize,
    },

    #[error("invalid survival time on row {row}: {reason}")]
    InvalidSurvivalTime { row: usize, reason: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no observed donor for feature `{feature}` (row {row})")]
    NoDonor { feature: String, row: usize },

    #[error("Newton iterations did not converge after {iterations} steps (gradient inf-norm {grad_norm:e})")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        last_iterate: Vec<f64>,
    },

    #[error("singular linear system")]
    Singular,

    #[error("censoring survival is zero at t = {time}")]
    ZeroCensoringWeight { time: f64 },

    #[error("no comparable pairs")]
    NoComparablePairs,

    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("model evaluation failed on coalition {coalition:?}: {reason}")]
    Coalition { coalition: Vec<usize>, reason: String },

    #[error("all {0} trials failed")]
    AllTrialsFailed(usize),

    #[error("censoring target {target} unattainable; achievable range is [{min}, {max})")]
    UnattainableCensoring { target: f64, min: f64, max: f64 },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn at_row(self, row: usize) -> Self {
        Error::Row {
            row,
            source: Box::new(self),
        }
    }

    /// Numerical failures (as opposed to validation errors); the CLI maps
    /// these to a distinct exit code.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonConvergence { .. }
            | Error::Singular
            | Error::ZeroCensoringWeight { .. }
            | Error::AllTrialsFailed(_)
            | Error::Coalition { .. } => true,
            Error::Row { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
