use std::fmt;

use crate::transport::TransportError;

/// Errors raised by the analytical model, the simulator and the workloads.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    /// `2L + t_s = 0`: speedup grows without bound, so there is no finite maximizer.
    #[error("unbounded scalability: 2L + t_s = 0")]
    UnboundedScalability,

    #[error("spin-work is not calibrated on this host; run SpinCalibration::measure first")]
    NotCalibrated,

    #[error(transparent)]
    Farm(#[from] FarmError),

    #[error(transparent)]
    Transport(#[from] TransportError),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

/// Phase of a farm run, used to locate failures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Distribute,
    Compute,
    Gather,
    Barrier,
    Reduce,
    Control,
    Finalize,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Init => "init",
            Phase::Distribute => "distribute",
            Phase::Compute => "compute",
            Phase::Gather => "gather",
            Phase::Barrier => "barrier",
            Phase::Reduce => "reduce",
            Phase::Control => "control",
            Phase::Finalize => "finalize",
        };
        f.write_str(s)
    }
}

/// A farm run aborted. Always names the phase and the rank that failed.
#[derive(Debug, thiserror::Error)]
pub enum FarmError {
    #[error("transport failure during {phase} on rank {rank}: {source}")]
    Transport {
        phase: Phase,
        rank: u16,
        #[source]
        source: TransportError,
    },

    #[error("problem callback failed during {phase} on rank {rank}: {message}")]
    Callback {
        phase: Phase,
        rank: u16,
        message: String,
    },

    #[error("rank {rank} panicked")]
    Panicked { rank: u16 },

    #[error("invalid farm configuration: {0}")]
    Config(String),
}

impl FarmError {
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            FarmError::Transport { .. } | FarmError::Panicked { .. }
        )
    }
}

/// Error type returned by [`FarmProblem`](crate::farm::FarmProblem) callbacks.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ProblemError(pub String);

impl ProblemError {
    pub fn new(msg: impl Into<String>) -> Self {
        ProblemError(msg.into())
    }
}

impl From<Error> for ProblemError {
    fn from(e: Error) -> Self {
        ProblemError(e.to_string())
    }
}
