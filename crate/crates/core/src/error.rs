use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A threshold candidate that came closest to passing the stability rule.
#[derive(Debug, Clone, PartialEq)]
pub struct NearMiss {
    pub threshold: f64,
    pub n_exceed: usize,
    pub score: Option<f64>,
}

impl fmt::Display for NearMiss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.score {
            Some(s) => write!(f, "{} um (n={}, score={:.3})", self.threshold, self.n_exceed, s),
            None => write!(f, "{} um (n={}, no score)", self.threshold, self.n_exceed),
        }
    }
}

fn list_near_misses(misses: &[NearMiss]) -> String {
    if misses.is_empty() {
        return "none".to_string();
    }
    misses.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: {message}")]
    Ingest {
        row: usize,
        column: String,
        message: String,
    },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("too few exceedances: {found} above threshold, at least {required} required")]
    TooFewExceedances { found: usize, required: usize },

    #[error("no threshold candidate passed the stability rule; closest: {}", list_near_misses(.near_misses))]
    NoStableThreshold { near_misses: Vec<NearMiss> },

    #[error("parameter covariance unavailable: {0}")]
    CovarianceUnavailable(String),

    #[error("quantile is unbounded: {0}")]
    Unbounded(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by the statistics (not enough data, no stable
    /// threshold, invalid estimator domain) rather than malformed input.
    pub fn is_statistical(&self) -> bool {
        matches!(
            self,
            Error::Fit(_)
                | Error::TooFewExceedances { .. }
                | Error::NoStableThreshold { .. }
                | Error::CovarianceUnavailable(_)
                | Error::Unbounded(_)
        )
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
