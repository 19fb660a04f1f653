use thiserror::Error;

/// Errors produced by the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("frame {frame} has no visible points")]
    FullyOccludedFrame { frame: usize },

    #[error("measurement matrix rank is below {required} (3k); try a smaller basis count")]
    RankDeficient { required: usize },

    #[error("ground-truth frame {frame} has zero norm")]
    ZeroNormFrame { frame: usize },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("{path}: row {row}, column {col}: {msg}")]
    Parse {
        path: String,
        row: usize,
        col: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
