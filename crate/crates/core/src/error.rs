use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed label {text:?}: {reason}")]
    MalformedLabel { text: String, reason: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error at line {line}{}: {message}", id.as_ref().map(|i| format!(" (id {i:?})")).unwrap_or_default())]
    Schema {
        line: usize,
        id: Option<String>,
        message: String,
    },

    #[error("duplicate detection id {0:?}")]
    DuplicateId(String),

    #[error("vector has zero norm")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("cluster has no members")]
    EmptyCluster,

    #[error("empty input")]
    EmptyInput,

    #[error("percentile must lie in (0, 100], got {0}")]
    InvalidPercentile(f64),

    #[error("non-finite gradient encountered; training diverged")]
    NonFiniteGradient,

    #[error("triplet sampling needs at least two species, found {0}")]
    InsufficientClasses(usize),

    #[error("triplet sampling needs a species with at least two members")]
    InsufficientMembers,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no species reached the minimum cluster size")]
    NoEligibleClusters,

    #[error("cluster {0} has zero mean intra-cluster distance")]
    DegenerateCluster(String),

    #[error("missing ground truth for {} detection(s): {}", .0.len(), .0.join(", "))]
    MissingGroundTruth(Vec<String>),

    #[error("invalid synthetic spec: {0}")]
    SpecInvalid(String),

    #[error("model file: {0}")]
    ModelFormat(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad inputs (files, labels, configs) rather than by the
    /// pipeline itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MalformedLabel { .. }
                | Error::Io { .. }
                | Error::Schema { .. }
                | Error::DuplicateId(_)
                | Error::InvalidConfig(_)
                | Error::SpecInvalid(_)
                | Error::ModelFormat(_)
        )
    }
}
