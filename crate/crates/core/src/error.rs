use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("disconnected graph after {attempts} attempts")]
    DisconnectedGraph { attempts: usize },

    #[error("graph is not connected")]
    NotConnected,

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid weight matrix: {0}")]
    InvalidWeights(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("stacked constraint matrix is rank deficient after {attempts} draws")]
    RankDeficient { attempts: usize },

    #[error("divergence at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("tracker did not reach consensus after {iterations} iterations (deviation {deviation:e})")]
    TrackerNotConverged { iterations: usize, deviation: f64 },

    #[error("spectral gate failed: disagreement spectral radius {radius} >= 1")]
    SpectralGate { radius: f64 },

    #[error("aggregate signature mismatch at component `{component}`: {reason}")]
    SignatureMismatch { component: String, reason: String },

    #[error("no feasible KKT candidate: {0}")]
    Infeasible(String),

    #[error("active-set enumeration supports at most {max} constraints, got {got}")]
    TooManyConstraints { got: usize, max: usize },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
