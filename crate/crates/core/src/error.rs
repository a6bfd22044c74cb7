use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::store::Modality;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed json in {path} (line {line}): {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    // store
    #[error("vector for '{id}' has norm {norm:e}, cannot normalize")]
    ZeroVector { id: String, norm: f64 },
    #[error("duplicate id '{0}'")]
    DuplicateId(String),
    #[error("empty id at record {0}")]
    EmptyId(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("row count mismatch: {meta} metadata records but {rows} vectors")]
    RowCountMismatch { meta: usize, rows: usize },
    #[error("checksum mismatch: manifest says {expected}, vector block hashes to {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
    #[error("vector for '{id}' has norm {norm} outside 1 +/- 1e-4")]
    NormOutOfTolerance { id: String, norm: f64 },
    #[error("unknown query type '{0}'")]
    UnknownQueryType(String),
    #[error("unknown item id '{0}'")]
    UnknownItem(String),
    #[error("qrels for query '{0}' has no positives")]
    EmptyQrels(String),

    // retrieval
    #[error("modality '{0}' has no items")]
    EmptyModality(Modality),
    #[error("store has no items")]
    EmptyStore,

    // calibration
    #[error("need at least 2 queries, got {0}")]
    TooFewQueries(usize),
    #[error("need at least 2 pairs for modality '{modality}', got {count}")]
    TooFewPairs { modality: Modality, count: usize },
    #[error("degenerate statistics for modality '{modality}': std {std:e} below 1e-6")]
    DegenerateStats { modality: Modality, std: f64 },
    #[error("no statistics for modality '{0}'")]
    MissingModalityStats(Modality),
    #[error("standardized retrieval requires a stats bundle")]
    MissingStats,
    #[error("stats bundle fingerprint {stats} does not match store fingerprint {store}")]
    FingerprintMismatch { stats: String, store: String },
    #[error("pair ({query_id}, {item_id}): {reason}")]
    InconsistentPair {
        query_id: String,
        item_id: String,
        reason: String,
    },

    // evaluation
    #[error("positive set is empty")]
    EmptyPositives,
    #[error("no qrels for query '{0}'")]
    MissingQrels(String),
    #[error("cutoff k={k} exceeds run depth {depth}")]
    CutoffExceedsRun { k: usize, depth: usize },
    #[error("invalid run: {0}")]
    InvalidRun(String),

    // analysis
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("input is constant")]
    ConstantInput,
    #[error("bad histogram range: {0}")]
    BadRange(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
}

impl Error {
    /// Stable, machine-readable name for the error kind.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::Json { .. } => "Json",
            Error::ZeroVector { .. } => "ZeroVector",
            Error::DuplicateId(_) => "DuplicateId",
            Error::EmptyId(_) => "EmptyId",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::RowCountMismatch { .. } => "RowCountMismatch",
            Error::ChecksumMismatch { .. } => "ChecksumMismatch",
            Error::CorruptManifest(_) => "CorruptManifest",
            Error::NormOutOfTolerance { .. } => "NormOutOfTolerance",
            Error::UnknownQueryType(_) => "UnknownQueryType",
            Error::UnknownItem(_) => "UnknownItem",
            Error::EmptyQrels(_) => "EmptyQrels",
            Error::EmptyModality(_) => "EmptyModality",
            Error::EmptyStore => "EmptyStore",
            Error::TooFewQueries(_) => "TooFewQueries",
            Error::TooFewPairs { .. } => "TooFewPairs",
            Error::DegenerateStats { .. } => "DegenerateStats",
            Error::MissingModalityStats(_) => "MissingModalityStats",
            Error::MissingStats => "MissingStats",
            Error::FingerprintMismatch { .. } => "FingerprintMismatch",
            Error::InconsistentPair { .. } => "InconsistentPair",
            Error::EmptyPositives => "EmptyPositives",
            Error::MissingQrels(_) => "MissingQrels",
            Error::CutoffExceedsRun { .. } => "CutoffExceedsRun",
            Error::InvalidRun(_) => "InvalidRun",
            Error::TooFewSamples { .. } => "TooFewSamples",
            Error::ConstantInput => "ConstantInput",
            Error::BadRange(_) => "BadRange",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::NonFinite(_) => "NonFinite",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
