use crate::synthgen::CalibrationFailure;

/// Crate-wide error type. Variants are deliberately coarse-grained: callers
/// (and the CLI exit-code mapping) dispatch on the variant, tests on the
/// message where the distinction matters.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("ordering error: agent {agent} frame {frame} is not strictly increasing")]
    Ordering { agent: String, frame: u64 },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("incomplete input: {0}")]
    Incomplete(String),
    #[error("degenerate dataset: {0}")]
    Degenerate(String),
    #[error("placement error: {0}")]
    Placement(String),
    #[error("calibration did not converge within {} iterations (best measurement {:.6})", .0.iterations, .0.best_measurement)]
    Calibration(Box<CalibrationFailure>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
