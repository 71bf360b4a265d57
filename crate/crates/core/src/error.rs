use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("non-finite Jacobian entries at {0:?}")]
    NonFiniteJacobian(Vec<(usize, usize)>),

    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("simulation diverged at step {step}")]
    Divergence { step: usize },

    #[error("training diverged: loss non-finite for {epochs} consecutive epochs (try a lower learning rate)")]
    TrainingDiverged { epochs: usize },

    #[error("measurement function has no closed-form moments")]
    UnsupportedMeasurement,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Numerical failures map to a distinct CLI exit code from input errors.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular(_)
                | Error::NonFiniteJacobian(_)
                | Error::NonFiniteActivation { .. }
                | Error::Numerical(_)
                | Error::Divergence { .. }
                | Error::TrainingDiverged { .. }
        )
    }
}
