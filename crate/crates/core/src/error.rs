use thiserror::Error;

use crate::flow::FlowTrajectory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid chart: {0}")]
    InvalidChart(String),

    #[error("unsupported dimension {0} (kernels are built for n = 3 and n = 4)")]
    UnsupportedDim(usize),

    #[error("field mismatch: {0}")]
    Mismatch(String),

    #[error("non-finite sample at point {point}")]
    NonFinite { point: usize },

    #[error("metric is not positive definite at point {point} {coords:?}")]
    SingularMetric { point: usize, coords: Vec<f64> },

    #[error("point {0:?} lies outside the chart domain")]
    OutOfDomain(Vec<f64>),

    #[error("step rejected at t = {t}: metric lost positive definiteness at point {point} {coords:?}")]
    StepRejected {
        t: f64,
        point: usize,
        coords: Vec<f64>,
    },

    #[error("eigenvalue ratio against the background left [{lo}, {hi}] at t = {t} (observed {observed})")]
    ClosenessLost {
        t: f64,
        observed: f64,
        lo: f64,
        hi: f64,
    },

    #[error("initial metric is not {threshold}-close to the background (observed ratio {observed})")]
    NotClose { threshold: f64, observed: f64 },

    #[error("flow aborted after {} snapshot(s): {reason}", partial.snapshots.len())]
    FlowAborted {
        reason: Box<Error>,
        partial: Box<FlowTrajectory>,
    },

    #[error("sigma_0 = {0} is outside the supported regime sigma_0 <= 0")]
    SigmaRegime(f64),

    #[error("below grid resolution: {0}")]
    Resolution(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("ill-conditioned fit: {0}")]
    Conditioning(String),

    #[error("sphere of radius {radius} does not fit inside the trusted region (limit {limit})")]
    Radius { radius: f64, limit: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("amplitude {amplitude} breaks positive definiteness at point {point}")]
    Amplitude { amplitude: f64, point: usize },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by invalid user input rather than by a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::InvalidChart(_)
                | Error::SigmaRegime(_)
                | Error::NotClose { .. }
                | Error::Amplitude { .. }
                | Error::UnsupportedDim(_)
        )
    }
}
