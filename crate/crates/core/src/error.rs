use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    /// The state became non-finite or left the `|q| <= 1e8` ball.
    #[error("divergence at step {step}: q = {last_q:?}, p = {last_p:?}")]
    Divergence {
        step: u64,
        /// Last finite state before the blow-up.
        last_q: Vec<f64>,
        last_p: Vec<f64>,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("ill-posed fit: {0}")]
    IllPosedFit(String),

    #[error("contract violation: {0}")]
    Contract(String),

    /// Failure inside one probe run of the covariance estimator.
    #[error("probe {index}: {source}")]
    Probe {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// The innermost error, looking through probe wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Probe { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
