use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("mesh topology: {0}")]
    Topology(String),

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("mesh generation: {0}")]
    Generation(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("{what} did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("numerical: {0}")]
    Numerical(String),

    #[error("point ({x}, {y}) lies outside the source mesh (distance {distance:.3e})")]
    Evaluation { x: f64, y: f64, distance: f64 },

    #[error("sampling: {0}")]
    Sampling(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line driver: 2 for invalid
    /// input or configuration, 3 for runtime and numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Topology(_)
            | Error::Geometry(_)
            | Error::Generation(_)
            | Error::Config(_) => 2,
            Error::Convergence { .. }
            | Error::Numerical(_)
            | Error::Evaluation { .. }
            | Error::Sampling(_)
            | Error::Io { .. } => 3,
        }
    }
}
