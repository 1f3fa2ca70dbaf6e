use thiserror::Error;

use crate::model::EventType;

/// Structural problems found while validating an epoch.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationKind {
    #[error("epoch has no running events before its failure")]
    EmptyEpoch,
    #[error("two consecutive {0} events; running states must alternate")]
    NonAlternating(EventType),
    #[error("duration must be finite and > 0, got {0}")]
    NonPositiveDuration(f64),
    #[error("expected {expected} sensor readings, got {got}")]
    SensorArityMismatch { expected: usize, got: usize },
    #[error("sensor reading is not finite")]
    NonFiniteSensor,
    #[error("failure event must be the last event of its epoch")]
    MisplacedFail,
    #[error("epoch has no terminating failure")]
    Censored,
    #[error("duplicate epoch id {0}")]
    DuplicateEpoch(u64),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("epoch {epoch_id}, event {event_index}: {kind}")]
    Validation {
        epoch_id: u64,
        /// Zero-based position of the offending event within the epoch.
        event_index: usize,
        kind: ValidationKind,
    },
    #[error("line {line}: {kind}")]
    InvalidRow { line: u64, kind: ValidationKind },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: sequence number {seq} out of order in epoch {epoch_id}")]
    DuplicateSeq { line: u64, epoch_id: u64, seq: u64 },
    #[error("dataset has no epochs")]
    EmptyDataset,
    #[error("parameter out of domain: {0}")]
    Domain(String),
    #[error("no {0} events in the data; its rate is not identifiable")]
    NoEventsOfKind(EventType),
    #[error("observed information is degenerate for {0}")]
    DegenerateInfo(&'static str),
    #[error("covariates not aligned with data: {0}")]
    Alignment(String),
    #[error("dataset has no sensor columns")]
    NoSensors,
    #[error("unknown covariate `{name}`{}", suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    UnknownCovariate { name: String, suggestion: Option<String> },
    #[error("design matrix is rank deficient; collinear columns: {0:?}")]
    RankDeficient(Vec<String>),
    #[error("optimizer did not converge after {iterations} iterations (gradient max-norm {gradient_norm:e})")]
    NotConverged { iterations: usize, gradient_norm: f64 },
    #[error("target has no usable epochs or a zero total count")]
    DegenerateTarget,
    #[error("{0} needs a non-empty input")]
    EmptyList(&'static str),
    #[error("length mismatch: {0} actual vs {1} predicted")]
    LengthMismatch(usize, usize),
    #[error("epoch {0} not found")]
    UnknownEpoch(u64),
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 1 for input/validation problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_)
            | Error::NoEventsOfKind(_)
            | Error::DegenerateInfo(_)
            | Error::RankDeficient(_)
            | Error::NotConverged { .. }
            | Error::DegenerateTarget => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
