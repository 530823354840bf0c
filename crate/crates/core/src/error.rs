use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate quaternion (zero norm)")]
    DegenerateQuaternion,

    #[error("quaternion is not unit (norm {0})")]
    NonUnitQuaternion(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("degenerate bounding box: zero extent on {0} axes")]
    DegenerateBox(usize),

    #[error("innovation covariance is singular after regularization")]
    SingularInnovation,

    #[error("covariance is not positive definite")]
    NotPositiveDefinite,

    #[error("registration needs at least {needed} measurements, got {got}")]
    TooFewMeasurements { needed: usize, got: usize },

    #[error("no informative action: every candidate missed the estimated object")]
    NoInformativeAction,

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// True for failures that originate in the numerics rather than in the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularInnovation
                | Error::NotPositiveDefinite
                | Error::DegenerateQuaternion
                | Error::NonUnitQuaternion(_)
                | Error::NoInformativeAction
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
