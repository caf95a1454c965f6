//! Safety metrics computed from an event log.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::log::{EventLog, LogEvent};
use super::scenario::Scenario;
use crate::actuator::{transition_time, WeaponMode};
use crate::error::SimError;

/// Time spent in Fire while each person interval was active, one entry per
/// person interval.
pub fn exposure_by_person(log: &EventLog, scenario: &Scenario) -> Result<Vec<f64>, SimError> {
    let fire = log.fire_intervals()?;
    Ok(scenario
        .person_intervals
        .iter()
        .map(|person| fire.iter().map(|f| f.overlap(person)).sum())
        .collect())
}

/// Measure of `{t : weapon in Fire} ∩ ⋃ person_intervals`.
pub fn exposure_time(log: &EventLog, scenario: &Scenario) -> Result<f64, SimError> {
    Ok(exposure_by_person(log, scenario)?.iter().sum())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReactionStats {
    /// Seconds from each person entry until the weapon is Safe; `None` when
    /// the run ended first.
    pub per_event: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub max: Option<f64>,
}

impl ReactionStats {
    pub fn resolved(&self) -> impl Iterator<Item = f64> + '_ {
        self.per_event.iter().flatten().copied()
    }

    pub fn unresolved(&self) -> usize {
        self.per_event.iter().filter(|l| l.is_none()).count()
    }
}

pub fn reaction_stats(log: &EventLog, scenario: &Scenario) -> Result<ReactionStats, SimError> {
    log.end_time()?;
    let timeline = log.mode_timeline()?;
    let per_event: Vec<Option<f64>> = scenario
        .person_intervals
        .iter()
        .map(|person| {
            let entry = person.start;
            // Mode in force at the entry instant, after same-instant changes.
            let at_entry = timeline.iter().take_while(|(t, _)| *t <= entry).last().map(|(_, m)| *m);
            if at_entry == Some(WeaponMode::Safe) {
                return Some(0.0);
            }
            timeline
                .iter()
                .find(|(t, m)| *t > entry && *m == WeaponMode::Safe)
                .map(|(t, _)| t - entry)
        })
        .collect();
    let resolved: Vec<f64> = per_event.iter().flatten().copied().collect();
    let mean = (!resolved.is_empty()).then(|| resolved.iter().sum::<f64>() / resolved.len() as f64);
    let max = resolved.iter().copied().reduce(f64::max);
    Ok(ReactionStats { per_event, mean, max })
}

/// Per-run summary with the effective configuration echoed back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub scenario: String,
    pub seed: u64,
    pub config: SimConfig,
    pub exposure_seconds: f64,
    pub exposure_per_person: Vec<f64>,
    pub reaction_latencies: Vec<Option<f64>>,
    pub mean_reaction: Option<f64>,
    pub max_reaction: Option<f64>,
    /// Camera latency plus inference delay.
    pub latency_floor: f64,
    /// Floor plus the servo's safe/fire transit: the latency for a weapon
    /// settled in Fire when the person appears on a capture instant.
    pub aligned_latency_budget: f64,
    /// Aligned budget plus one frame period of waiting for the next capture.
    pub worst_case_latency_bound: f64,
    pub shots_fired: usize,
    pub hits: usize,
    pub suppressed_shots: usize,
    pub mode_transitions: usize,
    pub frames_captured: usize,
    pub frames_delivered: usize,
}

pub fn risk_report(log: &EventLog, scenario: &Scenario, config: &SimConfig) -> Result<RiskReport, SimError> {
    let exposure_per_person = exposure_by_person(log, scenario)?;
    let reactions = reaction_stats(log, scenario)?;
    let period = config.profile.frame_period()?;
    let latency_floor = config.profile.pipeline_delay()?;
    let transit = transition_time(config.servo.safe_angle, config.servo.fire_angle, &config.servo);

    let mut report = RiskReport {
        scenario: scenario.name.clone(),
        seed: config.seed,
        config: config.clone(),
        exposure_seconds: exposure_per_person.iter().sum(),
        exposure_per_person,
        reaction_latencies: reactions.per_event.clone(),
        mean_reaction: reactions.mean,
        max_reaction: reactions.max,
        latency_floor,
        aligned_latency_budget: latency_floor + transit,
        worst_case_latency_bound: latency_floor + transit + period,
        shots_fired: 0,
        hits: 0,
        suppressed_shots: 0,
        mode_transitions: 0,
        frames_captured: 0,
        frames_delivered: 0,
    };
    for record in log.records() {
        match record.event {
            LogEvent::ShotFired { hit } => {
                report.shots_fired += 1;
                report.hits += usize::from(hit);
            }
            LogEvent::ShotSuppressed { .. } => report.suppressed_shots += 1,
            LogEvent::WeaponModeChanged { .. } => report.mode_transitions += 1,
            LogEvent::FrameCaptured { .. } => report.frames_captured += 1,
            LogEvent::FrameAvailable { .. } => report.frames_delivered += 1,
            _ => {}
        }
    }
    Ok(report)
}

/// Recomputes the report from a self-describing log.
pub fn report_from_log(log: &EventLog) -> Result<RiskReport, SimError> {
    log.check()?;
    let scenario = log.scenario()?;
    let (_, config, _) = log.header()?;
    risk_report(log, &scenario, config)
}
