//! Deterministic discrete-event simulation of one lane and its safety metrics.

mod config;
mod engine;
mod log;
mod metrics;
mod monte_carlo;
mod scenario;

pub use config::SimConfig;
pub use engine::{run, verify_controller_conformance, Simulation, WATCHDOG_SLACK};
pub use log::{EventLog, LogEvent, LogRecord};
pub use metrics::{
    exposure_by_person, exposure_time, reaction_stats, report_from_log, risk_report, ReactionStats, RiskReport,
};
pub use monte_carlo::{aggregate, derive_seed, monte_carlo, run_config, MonteCarloReport, RunSummary, Summary};
pub use scenario::{
    Interval, OperatorAction, OperatorCommand, Scenario, ScriptedShot, PERSON_BBOX, SCHEMA_VERSION, TARGET_BBOX,
};
