use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("gradient error: {0}")]
    Graph(String),

    #[error("spectral norm estimate {sigma:e} is below tolerance; matrix is numerically zero")]
    DegenerateMatrix { sigma: f64 },

    #[error("symmetric eigensolver did not converge: off-diagonal residual {residual:e}")]
    EigenNonConvergence { residual: f64 },

    #[error("IDX decode error at byte {offset}: {message}")]
    Idx { offset: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("classifier did not converge: accuracy {accuracy:.4} below required {required:.4}")]
    NonConvergence { accuracy: f64, required: f64 },

    #[error("oracle accuracy {accuracy:.4} is below the floor {floor:.4}")]
    OracleBelowFloor { accuracy: f64, floor: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
