use crate::weights::SamplingDiagnostics;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inconsistent dimensions, invalid parameters or an unsupported combination.
    #[error("configuration error: {0}")]
    Config(String),

    /// The integrator produced a non-finite state.
    #[error("integration diverged at step {step}{}", rollout.map(|k| format!(" of rollout {k}")).unwrap_or_default())]
    Diverged { rollout: Option<usize>, step: usize },

    /// Every cost in a batch is non-finite, so no weights can be formed.
    #[error("degenerate batch: all {0} costs are non-finite")]
    DegenerateBatch(usize),

    #[error("planning failed at step {step}: {reason}")]
    PlanningFailed {
        step: usize,
        reason: String,
        diagnostics: Option<Box<SamplingDiagnostics>>,
    },

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    /// A multiple-importance-sampling reweighting violates the unbiasedness condition.
    #[error("invalid reweighting scheme: {0}")]
    InvalidScheme(String),

    #[error("malformed log: {0}")]
    MalformedLog(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
