use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("csv line {line}, column `{column}`: cannot parse `{value}` as a number")]
    Parse {
        line: usize,
        column: String,
        value: String,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    HeaderMismatch { expected: String, found: String },
    #[error("nonpositive event time {value} in column `{column}` (row {row})")]
    NonpositiveEventTime {
        column: String,
        row: usize,
        value: f64,
    },
    #[error("event indicator `{column}` (row {row}) must be 0 or 1, found {value}")]
    InvalidEventIndicator {
        column: String,
        row: usize,
        value: f64,
    },
    #[error("binary column `{column}` (row {row}) must be 0 or 1, found {value}")]
    InvalidBinary {
        column: String,
        row: usize,
        value: f64,
    },
    #[error("categorical column `{column}` (row {row}) must be an integer code in [0, {levels}), found {value}")]
    InvalidCategory {
        column: String,
        row: usize,
        levels: usize,
        value: f64,
    },
    #[error("non-finite value in observed cell (`{column}`, row {row})")]
    NonFinite { column: String, row: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid scenario id {0} (expected 1..=4)")]
    InvalidScenario(u8),
    #[error("invalid missingness mechanism: {0}")]
    InvalidMechanism(String),
    #[error("predictor column `{0}` has missing values")]
    IncompletePredictor(String),
    #[error("invalid imputer spec for `{target}`: {reason}")]
    InvalidImputer { target: String, reason: String },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("insufficient complete rows: need {needed}, have {available}")]
    InsufficientRows { needed: usize, available: usize },
    #[error("singular design")]
    SingularDesign,
    #[error("fit did not converge after {0} iterations")]
    NonConvergence(usize),
    #[error("coefficient norm {0:.3e} exceeds bound (perfect separation?)")]
    Separation(f64),
    #[error("no events with positive weight")]
    NoEvents,
    #[error("event time {0} beyond baseline hazard support")]
    BaselineSupport(f64),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("all candidate densities are zero for subject {0}")]
    ZeroDensities(usize),
    #[error("unsupported outcome family for this operation: {0}")]
    UnsupportedFamily(String),
    #[error("matrix is singular")]
    Singular,
    #[error("fraction of missing information is 1 for coefficient `{0}`")]
    FullyMissing(String),
    #[error("row {row}: `{column}` is missing but required by the model")]
    MissingCell { row: usize, column: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}
