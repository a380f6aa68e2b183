use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(&'static str),

    #[error("requested {requested} expansion modes but only {available} positive eigenvalues are available")]
    InsufficientModes { requested: usize, available: usize },

    #[error("linear solve failed: {0}")]
    Singular(&'static str),

    #[error("Newton iteration did not converge at time step {step} (residual {residual:e})")]
    NewtonDivergence { step: usize, residual: f64 },

    #[error("non-finite training loss at step {step}; the learning rate is probably too large for this data scale")]
    SurrogateDivergence { step: usize },

    #[error("importance weights vanish for every probed smoothing parameter (proposal or surrogate collapse)")]
    SigmaCollapse,

    #[error("weights have zero mean")]
    ZeroMean,

    #[error("weighted EM failed: {0}")]
    Em(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Wraps an error with the name of the algorithm stage it came from.
    pub fn at_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
