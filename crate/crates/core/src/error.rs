use alloc::string::String;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InterlockError {
    #[error("invalid decision policy: {0}")]
    InvalidPolicy(&'static str),
    #[error("malformed class label {0:?}")]
    MalformedLabel(String),
    #[error("unknown detection class {0:?}")]
    UnknownClass(String),
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("bounding box must have positive size and lie inside the unit square")]
    InvalidBBox,
    #[error("frame available at {available} before capture at {capture}")]
    FrameTimeOrder { capture: f64, available: f64 },
    #[error("event time is not finite")]
    NonFiniteTime,
    #[error("time regression: event at {now} after {last}")]
    TimeRegression { last: f64, now: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActuatorError {
    #[error("pulse width {0} us outside [500, 2500]")]
    PulseOutOfRange(f64),
    #[error("angle {0} deg outside [0, 180]")]
    AngleOutOfRange(f64),
    #[error("negative time step {0}")]
    NegativeStep(f64),
    #[error("invalid servo spec: {0}")]
    InvalidSpec(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerceptionError {
    #[error("no benchmark row for model {model:?} on device {device:?}")]
    UnknownProfile { model: String, device: String },
    #[error("{model} did not run on {device}")]
    Unavailable { model: String, device: String },
    #[error("invalid detector profile: {0}")]
    InvalidProfile(&'static str),
    #[error("negative schedule duration {0}")]
    NegativeDuration(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("event log is truncated (no run-end record)")]
    TruncatedLog,
    #[error("event log is malformed: {0}")]
    MalformedLog(String),
    #[error(transparent)]
    Interlock(#[from] InterlockError),
    #[error(transparent)]
    Actuator(#[from] ActuatorError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
}
