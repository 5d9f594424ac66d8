use thiserror::Error;

/// Errors produced by the calibration toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sample")]
    EmptySample,

    #[error("invalid bound pair: lower {lo} exceeds upper {hi}")]
    InvalidBoundPair { lo: f64, hi: f64 },

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("family cannot cover sample (y = {y})")]
    CannotCover { y: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate case: {0}")]
    DegenerateCase(String),

    #[error("disconnected network: bus {0} is unreachable from the slack bus")]
    Disconnected(usize),

    #[error("infeasible demand: total {total} outside aggregate limits [{min}, {max}]")]
    InfeasibleDemand { total: f64, min: f64, max: f64 },

    #[error("linear program is {0}")]
    LpStatus(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("bound sandwich violated on sample {index}: b_lo={b_lo}, y={y}, b_hi={b_hi}")]
    SandwichViolation { index: usize, b_lo: f64, y: f64, b_hi: f64 },

    #[error("insufficient samples: need {needed}, have {have}")]
    InsufficientSamples { needed: usize, have: usize },

    #[error("unknown method `{name}`; valid methods: {valid}")]
    UnknownMethod { name: String, valid: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
