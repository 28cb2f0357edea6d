use thiserror::Error;

use crate::latent::Axis;

pub type Result<T> = std::result::Result<T, LpError>;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("range [{start}, {end}) out of bounds for {axis} extent {extent}")]
    OutOfBounds {
        axis: Axis,
        start: usize,
        end: usize,
        extent: usize,
    },

    #[error("empty range [{start}, {start}) on {axis}")]
    EmptyRange { axis: Axis, start: usize },

    #[error("{axis} extent {extent} is smaller than patch size {patch}")]
    DegenerateAxis {
        axis: Axis,
        extent: usize,
        patch: usize,
    },

    #[error("overlap ratio {ratio} outside [0, {max}]")]
    InvalidOverlapRatio { ratio: f64, max: usize },

    #[error("global index {index} outside partition extent [{start}, {end})")]
    OutsideExtent {
        index: usize,
        start: usize,
        end: usize,
    },

    #[error("total blend weight {total} at position {position} (expected >= 1)")]
    ZeroWeight { position: usize, total: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("worker {worker} failed at step {step}: {reason}")]
    WorkerFailure {
        worker: usize,
        step: usize,
        reason: String,
    },

    #[error("invalid grouping: {0}")]
    InvalidGrouping(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("ledger inconsistency: {0}")]
    Ledger(String),

    #[error("denoiser error: {0}")]
    Denoiser(String),

    #[error("malformed latent dump: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LpError {
    /// True for errors caused by user-supplied configuration rather than a
    /// failure during execution.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            LpError::InvalidConfig(_)
                | LpError::InvalidOverlapRatio { .. }
                | LpError::DegenerateAxis { .. }
                | LpError::InvalidGrouping(_)
                | LpError::Json(_)
        )
    }
}
