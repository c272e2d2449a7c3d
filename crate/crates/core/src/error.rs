use thiserror::Error;

use crate::ndgrad::GradError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite {what} at row {row}")]
    Numeric { what: &'static str, row: usize },
    #[error("feature weights collapsed: ||p||_2 = {norm:e}")]
    DegenerateWeights { norm: f64 },
    #[error("training failed in stage {stage} at step {step}: {reason}")]
    Training { stage: u8, step: usize, reason: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}
