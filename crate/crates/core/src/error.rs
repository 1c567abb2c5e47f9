use thiserror::Error;

pub type Result<T, E = NodiError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NodiError {
    #[error("invalid classifier head: {0}")]
    InvalidHead(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("degenerate feature at row {row}: zero norm")]
    DegenerateFeature { row: usize },

    #[error("malformed file at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("label {label} at row {row} outside [0, {num_classes})")]
    Label { row: usize, label: u64, num_classes: usize },

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("timestep {step} outside [0, {max})")]
    Step { step: usize, max: usize },

    #[error("cumulative coefficient {0} outside (0, 1)")]
    Coefficient(f64),

    #[error("class {0} has no reference points")]
    EmptyClass(usize),

    #[error("{what} index {index} outside [0, {len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl NodiError {
    pub(crate) fn format(offset: u64, reason: impl Into<String>) -> Self {
        NodiError::Format {
            offset,
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(NodiError::Dimension { expected, actual });
    }
    Ok(())
}
