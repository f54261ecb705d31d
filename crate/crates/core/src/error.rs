//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by graph construction, generators, solvers and IO.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Eigensolver ran out of iterations. The partial basis (with residual
    /// diagnostics) is attached so callers can inspect or accept it.
    #[error("eigensolver did not converge within {iterations} iterations (worst residual {worst_residual:.3e})")]
    EigenNonConvergence {
        iterations: usize,
        worst_residual: f64,
        partial: Box<crate::spectral::EigenBasis>,
    },

    #[error("could not generate a weakly connected graph within {0} attempts")]
    Connectivity(usize),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
