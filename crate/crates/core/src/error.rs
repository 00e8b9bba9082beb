use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Variants split into input-validation failures (bad files, bad parameters,
/// broken contracts) and runtime failures (I/O); see [`Error::is_validation`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic bytes, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        expected: &'static str,
    },

    #[error("dimension mismatch: header declares {rows}x{cols} ({expected} values) but payload holds {actual}")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value {value} at row {row}, col {col}")]
    NonFinite { row: usize, col: usize, value: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("probability row {row} sums to {sum:.6}, expected 1 within {tolerance}")]
    ProbabilityRow {
        row: usize,
        sum: f64,
        tolerance: f64,
    },

    #[error("label {label} at node {node} is out of range for {classes} classes")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        classes: usize,
    },

    #[error("node index {index} out of range for {n} nodes")]
    NodeOutOfRange { index: usize, n: usize },

    #[error("row count mismatch: {what} has {actual} rows, expected {expected}")]
    RowMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("class {class} has {count} nodes, need at least {needed}")]
    ClassTooSmall {
        class: usize,
        count: usize,
        needed: usize,
    },

    #[error("split pool exhausted: {0}")]
    PoolExhausted(String),

    #[error("empty {0} set")]
    EmptySet(&'static str),

    #[error("evaluation set overlaps calibration set at node {0}")]
    SplitOverlap(usize),

    #[error("negative weight {weight} on row {row}; set min_similarity >= 0")]
    NegativeWeight { row: usize, weight: f64 },

    #[error("infeasible graph: {0}")]
    InfeasibleGraph(String),

    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("report serialization: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::Serialize(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
