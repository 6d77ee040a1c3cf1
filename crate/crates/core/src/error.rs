use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: non-numeric value {value:?} in column `{column}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: negative survtime {value}")]
    NegativeSurvtime { row: usize, value: f64 },

    #[error("row {row}: censorid must be 0 or 1, got {value:?}")]
    InvalidCensorid { row: usize, value: String },

    #[error("row {row}: missing value for covariate `{column}`")]
    MissingCell { row: usize, column: String },

    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("undefined arrival span for unit `{unit}`: need at least two distinct entry times")]
    UndefinedArrivalSpan { unit: String },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("complete separation: coefficient `{name}` diverged ({value:.3})")]
    Separation { name: String, value: f64 },

    #[error("no observed events")]
    NoEvents,

    #[error("did not converge after {iterations} iterations (score max-norm {score:.3e})")]
    NonConvergence { iterations: usize, score: f64 },

    #[error("missing covariate `{0}`")]
    MissingCovariate(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("outcome indeterminate within the followup window (censored early) for rows {rows:?}")]
    IndeterminateOutcome { rows: Vec<usize> },

    #[error("no records to analyse")]
    Empty,

    #[error("empty window")]
    EmptyWindow,

    #[error("unit `{unit}` has observed failures but zero expected failures")]
    ZeroExpected { unit: String },

    #[error("insufficient events to calibrate: every simulated chart maximum is zero")]
    InsufficientEvents,

    #[error("malformed model or chart document: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the error stems from bad input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::NonConvergence { .. }
                | Error::Separation { .. }
                | Error::InsufficientEvents
                | Error::Io(_)
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
