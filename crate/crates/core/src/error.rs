use std::fmt;

/// Matrix axis named in dimension errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Spectral bands (`n`).
    Bands,
    /// Pixels (`m`).
    Pixels,
    /// Endmembers (`r`).
    Endmembers,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::Bands => "bands (n)",
            Axis::Pixels => "pixels (m)",
            Axis::Endmembers => "endmembers (r)",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch on {axis}: expected {expected}, found {found}")]
    DimensionMismatch { axis: Axis, expected: usize, found: usize },
    #[error("invalid rank {0}: must be at least 1")]
    InvalidRank(usize),
    #[error("rank {rank} exceeds min(n, m) = {limit}")]
    RankTooLarge { rank: usize, limit: usize },
    #[error("singular value decomposition failed: {0}")]
    SvdFailure(String),
    #[error("degenerate signal{}: population variance {variance:e} is not above the guard", column_suffix(.column))]
    DegenerateSignal { column: Option<usize>, variance: f64 },
    #[error("divergence undefined at ({row}, {col}): data is positive but the model is {model:e}")]
    DomainError { row: usize, col: usize, model: f64 },
    #[error("smoothing parameter theta = {0} is outside [0, 1]")]
    InvalidTheta(f64),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid synthetic scene spec: {0}")]
    InvalidSpec(String),
    #[error("library holds {available} spectra, {requested} requested")]
    LibraryTooSmall { requested: usize, available: usize },
    #[error("zero vector has no spectral angle")]
    ZeroVector,
    #[error("bad magic bytes: expected \"HSB1\"")]
    BadMagic,
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("non-finite value at index {0}")]
    NonFiniteValue(usize),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line} has {found} columns, header declares {expected}")]
    RaggedRows { line: usize, expected: usize, found: usize },
    #[error("write failed for {path}: {source}")]
    WriteFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn column_suffix(column: &Option<usize>) -> String {
    match column {
        Some(c) => format!(" in column {c}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
