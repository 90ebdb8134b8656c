use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid rival matrix: {0}")]
    InvalidRivalMatrix(String),

    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("label space of {classes} classes exceeds the enumeration guard of {guard}")]
    EnumerationGuard { classes: usize, guard: usize },

    #[error("matrix is rank deficient: numerical rank {rank} < {required} (tolerance {tolerance:e})")]
    RankDeficient {
        rank: usize,
        required: usize,
        tolerance: f64,
    },

    #[error("ambiguity condition violated: maximal inclusion rate {max_rate} is not below 1")]
    Ambiguity { max_rate: f64 },

    #[error("row {row} of the rival matrix cannot be sampled (sum {sum})")]
    UnsamplableRow { row: usize, sum: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("embedding is not unit norm (norm {norm})")]
    NotUnitNorm { norm: f64 },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("training diverged at epoch {epoch} (last finite epoch: {last_finite:?})")]
    Diverged {
        epoch: usize,
        last_finite: Option<usize>,
    },

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn arg(arg: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            arg,
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            reason: reason.into(),
        }
    }
}
