use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("hidden_size {hidden_size} != num_heads {num_heads} * head_dim {head_dim}")]
    DimensionMismatch {
        hidden_size: u64,
        num_heads: u64,
        head_dim: u64,
    },

    #[error("`{0}` must be strictly positive")]
    NonPositiveField(&'static str),

    #[error("integer overflow while computing {0}")]
    Overflow(&'static str),

    #[error("degenerate cost: {flops} flops with zero memory traffic")]
    DegenerateCost { flops: u64 },

    #[error("underdetermined system: {samples} samples for {coefficients} coefficients")]
    Underdetermined { samples: usize, coefficients: usize },

    #[error(
        "rank-deficient design matrix: rank {rank} of {columns} (singular value ratio {ratio:e})"
    )]
    RankDeficient {
        rank: usize,
        columns: usize,
        ratio: f64,
    },

    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    FeatureDimension { expected: usize, got: usize },

    #[error("mixed phases in sample set: expected {expected}, found {found}")]
    MixedPhase {
        expected: crate::arch::Phase,
        found: crate::arch::Phase,
    },

    #[error("sequence of {len} tokens exceeds reserved length {reserved}")]
    ReservedOverflow { len: u64, reserved: u64 },

    #[error("request {id} needs {needed} KV bytes but capacity is {capacity}")]
    CapacityInfeasible { id: u64, needed: u64, capacity: u64 },

    #[error("missing {0} coefficients")]
    MissingCoefficients(crate::arch::Phase),

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }
}
