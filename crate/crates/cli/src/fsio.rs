use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use survkit::dataset::{Cohort, NormalizationStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

/// A failed command. Exit code 2 for validation and I/O problems, 3 for
/// numerical failures.
#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub error: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(error: ErrorKind, message: impl Into<String>) -> Self {
        CliError { error, message: message.into() }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Validation, message)
    }

    pub fn exit_code(&self) -> i32 {
        match self.error {
            ErrorKind::Validation | ErrorKind::Io => 2,
            ErrorKind::Numerical => 3,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.error, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<survkit::Error> for CliError {
    fn from(e: survkit::Error) -> Self {
        let kind = match &e {
            survkit::Error::Io { .. } => ErrorKind::Io,
            e if e.is_numerical() => ErrorKind::Numerical,
            survkit::Error::Row { source, .. } if source.is_numerical() => ErrorKind::Numerical,
            _ => ErrorKind::Validation,
        };
        CliError::new(kind, e.to_string())
    }
}

pub fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(ErrorKind::Io, format!("{}: {e}", path.display()))
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::validation(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

pub fn write_cohort_csv(path: &Path, cohort: &Cohort) -> Result<(), CliError> {
    let f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    cohort.write_csv(std::io::BufWriter::new(f))?;
    Ok(())
}

/// Normalized, imputed train/test cohorts from a preprocess directory.
pub struct Prepared {
    pub train: Cohort,
    pub test: Cohort,
    pub stats: NormalizationStats,
}

pub fn load_prepared(dir: &Path) -> Result<Prepared, CliError> {
    Ok(Prepared {
        train: read_json(&dir.join("train.json"))?,
        test: read_json(&dir.join("test.json"))?,
        stats: read_json(&dir.join("normalization.json"))?,
    })
}

pub fn parse_model_kind(s: &str) -> Result<survkit::models::ModelKind, CliError> {
    survkit::models::ModelKind::parse(s)
        .ok_or_else(|| CliError::validation(format!("unknown model `{s}`; expected cox, rsf or est")))
}
