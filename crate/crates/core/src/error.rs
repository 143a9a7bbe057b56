use thiserror::Error;

/// Errors produced by the spectroscopy toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// No positive scale makes the requested correlation profile realizable.
    #[error("infeasible target: {0}")]
    InfeasibleTarget(String),

    #[error("FIR design failed: residual {residual:.3e} exceeds {limit:.1e}")]
    DesignFailure { residual: f64, limit: f64 },

    /// The ensemble-averaged coherence is not positive, so the decay
    /// exponent cannot be taken. Shorten the sequence or add repetitions.
    #[error("decoherence floor reached: mean coherence {mean_coherence:.3e}")]
    DecoherenceFloor { mean_coherence: f64 },

    #[error("infeasible lags: {lags:?}")]
    InfeasibleLags { lags: Vec<usize> },

    #[error("solver did not converge: duality gap {gap:.3e} after {sweeps} sweeps")]
    SolverFailure { gap: f64, sweeps: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
