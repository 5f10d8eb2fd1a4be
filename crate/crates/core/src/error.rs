use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{metric} value {value} lies outside [0, 1] beyond rounding slack")]
    OutOfRange { metric: &'static str, value: f64 },

    #[error("missing similarity for language pair ({0}, {1})")]
    MissingPair(String, String),

    #[error("layer {0} missing from per-layer values")]
    LayerGap(usize),

    #[error("column `{0}` has zero variance")]
    ConstantColumn(String),

    #[error("design matrix is rank deficient; collinear columns: {0:?}")]
    RankDeficient(Vec<String>),

    #[error("bootstrap skipped {skipped} of {total} replicates (limit 1%)")]
    TooManySkipped { skipped: usize, total: usize },

    #[error("parameter mismatch: {0}")]
    ParameterMismatch(String),

    #[error("parallel corpus incomplete: sequence `{id}` has no `{language}` counterpart")]
    MissingCounterpart { id: String, language: String },

    #[error(transparent)]
    Bundle(#[from] BundleError),
}

impl Error {
    /// Resample-level degeneracy that the bootstrap counts instead of aborting on.
    pub(crate) fn is_degenerate_fit(&self) -> bool {
        matches!(self, Error::ConstantColumn(_) | Error::RankDeficient(_))
    }
}

/// Failures while reading or writing an activation bundle.
#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: bad magic at offset 0 (expected \"LVAR1\\0\")")]
    BadMagic { path: PathBuf },

    #[error("{path}: unsupported format version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("{path}: truncated file, expected {expected} bytes but found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{path}: {extra} trailing bytes after payload")]
    TrailingData { path: PathBuf, extra: u64 },

    #[error("sequence `{id}` ({language}): {field} is {found} in file but manifest declares {declared}")]
    DimensionMismatch {
        id: String,
        language: String,
        field: &'static str,
        declared: usize,
        found: usize,
    },

    #[error("sequence `{id}` ({language}): non-finite value at layer {layer}, row {row}, column {col}")]
    NonFinite {
        id: String,
        language: String,
        layer: usize,
        row: usize,
        col: usize,
    },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}
