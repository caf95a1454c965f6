use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::scenario::{Interval, OperatorCommand, Scenario};
use crate::actuator::WeaponMode;
use crate::error::SimError;
use crate::interlock::{DetectionClass, DetectionFrame, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEvent {
    /// First record of every log; carries what is needed to replay the run.
    RunStart { scenario: Scenario, config: SimConfig, weapon_mode: WeaponMode },
    FrameCaptured { frame: u64, truth: Vec<DetectionClass> },
    FrameAvailable { frame: u64, detections: DetectionFrame },
    Decision { frame: u64, arm_present: bool, veto_present: bool, commanded: Mode, consecutive_arm_frames: u32 },
    Operator { command: OperatorCommand },
    /// Watchdog tick that reached the controller.
    Tick,
    /// Mode change emitted by the controller.
    ModeCommand { mode: Mode },
    /// The engine re-sent the controller's standing intent to an idle servo.
    Reissue { mode: Mode },
    MotionStart { from: f64, to: f64 },
    MotionPreempted { angle: f64, to: f64 },
    MotionEnd { angle: f64 },
    CommandDiscarded { mode: Mode },
    WeaponModeChanged { from: WeaponMode, to: WeaponMode },
    ShotFired { hit: bool },
    ShotSuppressed { weapon_mode: WeaponMode },
    PersonInjected { interval: Interval },
    RunEnd { weapon_mode: WeaponMode },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub time: f64,
    #[serde(flatten)]
    pub event: LogEvent,
}

/// Timestamped record of a run, in processing order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventLog {
    records: Vec<LogRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: f64, event: LogEvent) {
        let seq = self.records.len() as u64;
        self.records.push(LogRecord { seq, time, event });
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Rebuilds a log from deserialized records, checking its structure.
    pub fn from_records(records: Vec<LogRecord>) -> Result<Self, SimError> {
        let log = Self { records };
        log.check()?;
        Ok(log)
    }

    pub fn header(&self) -> Result<(&Scenario, &SimConfig, WeaponMode), SimError> {
        match self.records.first().map(|r| &r.event) {
            Some(LogEvent::RunStart { scenario, config, weapon_mode }) => Ok((scenario, config, *weapon_mode)),
            _ => Err(SimError::MalformedLog("first record is not run_start".into())),
        }
    }

    pub fn end_time(&self) -> Result<f64, SimError> {
        match self.records.last() {
            Some(LogRecord { time, event: LogEvent::RunEnd { .. }, .. }) => Ok(*time),
            _ => Err(SimError::TruncatedLog),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.end_time().is_ok()
    }

    /// The header scenario plus any person intervals injected during the run.
    pub fn scenario(&self) -> Result<Scenario, SimError> {
        let (scenario, _, _) = self.header()?;
        let mut scenario = scenario.clone();
        for record in &self.records {
            if let LogEvent::PersonInjected { interval } = record.event {
                scenario.add_person_interval(interval)?;
            }
        }
        Ok(scenario)
    }

    /// Structural checks: header first, sequence numbers dense, time
    /// non-decreasing, every motion start closed by an end or a preemption
    /// (the last one may still be open at run end).
    pub fn check(&self) -> Result<(), SimError> {
        self.header()?;
        let mut last_time = f64::NEG_INFINITY;
        let mut open_motion = false;
        for (i, record) in self.records.iter().enumerate() {
            if record.seq != i as u64 {
                return Err(SimError::MalformedLog(alloc::format!("record {i} has seq {}", record.seq)));
            }
            if record.time.is_nan() || record.time < last_time {
                return Err(SimError::MalformedLog(alloc::format!("time goes backwards at record {i}")));
            }
            last_time = record.time;
            match record.event {
                LogEvent::RunStart { .. } if i > 0 => {
                    return Err(SimError::MalformedLog(alloc::format!("second run_start at record {i}")));
                }
                LogEvent::MotionStart { .. } => {
                    if open_motion {
                        return Err(SimError::MalformedLog(alloc::format!("unclosed motion before record {i}")));
                    }
                    open_motion = true;
                }
                LogEvent::MotionPreempted { .. } => open_motion = true,
                LogEvent::MotionEnd { .. } => open_motion = false,
                _ => {}
            }
        }
        Ok(())
    }

    /// Weapon mode as a step function: `(time, mode)` pairs, first at the
    /// run start. Several entries may share a timestamp.
    pub fn mode_timeline(&self) -> Result<Vec<(f64, WeaponMode)>, SimError> {
        let (_, _, initial) = self.header()?;
        let mut timeline = Vec::new();
        timeline.push((self.records[0].time, initial));
        for record in &self.records {
            if let LogEvent::WeaponModeChanged { to, .. } = record.event {
                timeline.push((record.time, to));
            }
        }
        Ok(timeline)
    }

    /// Intervals during which the weapon was in Fire mode.
    pub fn fire_intervals(&self) -> Result<Vec<Interval>, SimError> {
        let end = self.end_time()?;
        let mut intervals = Vec::new();
        let mut fire_since = None;
        for (time, mode) in self.mode_timeline()? {
            match (mode == WeaponMode::Fire, fire_since) {
                (true, None) => fire_since = Some(time),
                (false, Some(start)) => {
                    if time > start {
                        intervals.push(Interval::new(start, time));
                    }
                    fire_since = None;
                }
                _ => {}
            }
        }
        if let Some(start) = fire_since {
            if end > start {
                intervals.push(Interval::new(start, end));
            }
        }
        Ok(intervals)
    }

    pub fn controller_commands(&self) -> impl Iterator<Item = (f64, Mode)> + '_ {
        self.records.iter().filter_map(|r| match r.event {
            LogEvent::ModeCommand { mode } => Some((r.time, mode)),
            _ => None,
        })
    }
}
