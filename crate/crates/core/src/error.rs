use crate::tensor3::Vec3;
use std::path::PathBuf;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An integrand or map was asked for a value at (or numerically at) its singular set.
    #[error("evaluation at singular point {point:?}: {reason}")]
    Singular { point: Vec3, reason: String },

    #[error("newton iteration did not converge at x = {x:?} after {iterations} iterations (residual {residual:e})")]
    NewtonDivergence { x: Vec3, iterations: usize, residual: f64 },

    /// Successive extrapolants of an exclusion ladder disagree by more than the allowed threshold.
    #[error("quadrature did not converge: extrapolants {extrapolants:?} differ by {spread:e} > {threshold:e}")]
    NonConvergence {
        extrapolants: Vec<f64>,
        spread: f64,
        threshold: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
