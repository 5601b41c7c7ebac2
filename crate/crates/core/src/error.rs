use thiserror::Error;

use crate::domain::RobotId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("no trackable empathy state")]
    NoTrackableState,
    #[error("beliefs exhausted for robot {0}")]
    BeliefsExhausted(RobotId),
    #[error("belief revision impossible")]
    RevisionImpossible,
    #[error("goal formula unsatisfiable: {0}")]
    Unsatisfiable(String),
    #[error("no zero-violation chromosome survived")]
    NoFeasibleSolution,
    #[error("malformed chromosome: {0}")]
    Decode(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("environment generation failed: {0}")]
    Generation(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("json: {0}")]
    Json(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}
