use thiserror::Error;

use crate::domain::{InvariantViolation, SliceId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scenario failed validation: {}", format_violations(.0))]
    Invalid(Vec<InvariantViolation>),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown slice {0}")]
    UnknownSlice(SliceId),

    #[error("finite-difference step must be positive, got {0}")]
    DegenerateDelta(f64),

    #[error("at least one probe seed is required")]
    NoProbes,

    #[error("oracle failure for slice {slice}: {reason}")]
    OracleFailure { slice: SliceId, reason: String },

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("slice {0} has no delay bound; M/M/1 sizing needs one")]
    UnboundedDelay(SliceId),

    #[error("M/M/1 sizing for slice {slice} needs more than the full resource (clamped)")]
    InfeasibleDemand {
        slice: SliceId,
        clamped: crate::baseline::Mm1Sizing,
    },

    #[error("scenario parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_violations(v: &[InvariantViolation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
