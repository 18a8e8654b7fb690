use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid loss: {0}")]
    InvalidLoss(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("set-characteristic regularizer has no subgradient rule; use the proximal step instead")]
    UseProx,

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("trajectory does not use a constant step size")]
    NonConstantSchedule,

    #[error("trajectory is missing {0}")]
    MissingRecord(&'static str),

    #[error("bound requires the constant `{0}`")]
    MissingConstant(&'static str),

    #[error("unknown bound id `{0}`")]
    UnknownBound(String),

    #[error("step schedule exhausted at t = {0}")]
    ScheduleExhausted(usize),

    #[error("weights must be strictly positive under the entropic mirror map")]
    NonPositiveWeights,

    #[error("numeric oracle did not converge: {0}")]
    NonConvergence(String),

    #[error("input row {row}: {message}")]
    Input { row: usize, message: String },

    #[error("at t = {t}: {source}")]
    AtStep {
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at(self, t: usize) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                t,
                source: Box::new(e),
            },
        }
    }

    /// Timestep attached to the error, if any.
    pub fn timestep(&self) -> Option<usize> {
        match self {
            Error::AtStep { t, .. } => Some(*t),
            _ => None,
        }
    }
}
