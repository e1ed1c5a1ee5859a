use thiserror::Error;

/// Errors raised anywhere in the library. Each variant belongs to one
/// [`ErrorClass`], which the command line tool maps to an exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("max depth exceeded: requested {requested}, limit {limit}")]
    MaxDepthExceeded { requested: usize, limit: usize },
    #[error("enumeration too large: {count} partitions exceed the guard of {guard}")]
    EnumerationTooLarge { count: f64, guard: usize },
    #[error("invalid cell: {0}")]
    InvalidCell(String),
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("dimension mismatch at record {record}: {detail}")]
    DimensionMismatch { record: usize, detail: String },
    #[error("non-finite coordinate at record {record}")]
    NonFiniteCoordinate { record: usize },
    #[error("too few records: {found} found, at least {needed} required")]
    TooFewRecords { found: usize, needed: usize },
    #[error("zero-width axis {axis}: every value equals {value}")]
    ZeroWidthAxis { axis: usize, value: f64 },
    #[error("point outside domain: {0}")]
    PointOutsideDomain(String),
    #[error("parse error: {0}")]
    Parse(String),

    #[error("unindexed depth: query at depth {requested}, tree built to depth {built}")]
    UnindexedDepth { requested: usize, built: usize },
    #[error("corrupt tree dump: {0}")]
    CorruptDump(String),

    #[error("negative density value {value} at leaf {leaf}")]
    NegativeDensity { leaf: usize, value: f64 },
    #[error("kernel mismatch: {0}")]
    KernelMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("set never visited: {0}")]
    SetNeverVisited(String),
    #[error("weak mixing requires Markov controls")]
    NonMarkovControls,
    #[error("missing field `{field}` for remainder flavor {flavor}")]
    MissingField { flavor: String, field: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse grouping of [`Error`] used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Geometry,
    Model,
    Config,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            MaxDepthExceeded { .. }
            | EnumerationTooLarge { .. }
            | InvalidCell(_)
            | InvalidBox(_) => ErrorClass::Geometry,
            DimensionMismatch { .. }
            | NonFiniteCoordinate { .. }
            | TooFewRecords { .. }
            | ZeroWidthAxis { .. }
            | PointOutsideDomain(_)
            | Parse(_)
            | Csv(_) => ErrorClass::Input,
            UnindexedDepth { .. } | CorruptDump(_) | NegativeDensity { .. } | KernelMismatch(_) => {
                ErrorClass::Model
            }
            InvalidParameter(_) | SetNeverVisited(_) | NonMarkovControls | MissingField { .. } => {
                ErrorClass::Config
            }
            Io(_) | Json(_) => ErrorClass::Io,
        }
    }

    /// Process exit code for this error. Code 2 is left to argument parsing.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Input => 3,
            ErrorClass::Geometry => 4,
            ErrorClass::Model => 5,
            ErrorClass::Config => 6,
            ErrorClass::Io => 7,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
