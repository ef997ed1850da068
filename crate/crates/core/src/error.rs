use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid storage spec (segment {segment}): {reason}")]
    InvalidSpec { segment: usize, reason: String },

    #[error("invalid storage state: {0}")]
    InvalidState(String),

    #[error("infeasible dispatch: {0}")]
    InfeasibleDispatch(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("bids are not strictly decreasing in SoC: {side} bid at segment {segment}")]
    NonMonotoneBids { side: &'static str, segment: usize },

    #[error("power balance infeasible: shortfall {shortfall_mw:.6} MW ({detail})")]
    InfeasibleBalance { shortfall_mw: f64, detail: String },

    #[error("unit commitment infeasible at hour {hour}: {reason}")]
    Commitment { hour: usize, reason: String },

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag, used by the CLI error JSON and the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidSpec { .. } => "invalid_spec",
            Error::InvalidState(_) => "invalid_state",
            Error::InfeasibleDispatch(_) => "infeasible_dispatch",
            Error::Grid(_) => "invalid_grid",
            Error::OutOfRange(_) => "out_of_range",
            Error::InvalidInput(_) => "invalid_input",
            Error::NonMonotoneBids { .. } => "non_monotone_bids",
            Error::InfeasibleBalance { .. } => "infeasible_balance",
            Error::Commitment { .. } => "commitment_infeasible",
            Error::TooLarge(_) => "too_large",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
