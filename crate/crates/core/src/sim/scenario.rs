use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::interlock::{BBox, DetectionClass};
use crate::perception::{SceneEntity, SceneSnapshot};

pub const SCHEMA_VERSION: u32 = 1;

/// Half-open time interval `[start, end)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub const fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn overlap(&self, other: &Interval) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorCommand {
    Arm,
    Disarm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorAction {
    pub time: f64,
    pub command: OperatorCommand,
}

/// A trigger pull by the shooter; `hit` is what happens if the round leaves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedShot {
    pub time: f64,
    pub hit: bool,
}

/// Scripted ground truth for one lane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub duration: f64,
    #[serde(default)]
    pub target_intervals: Vec<Interval>,
    #[serde(default)]
    pub person_intervals: Vec<Interval>,
    #[serde(default)]
    pub operator_commands: Vec<OperatorAction>,
    #[serde(default)]
    pub shot_script: Vec<ScriptedShot>,
}

/// Where the target board sits in the image.
pub const TARGET_BBOX: BBox = BBox::new(0.45, 0.30, 0.10, 0.30);
/// Where an intruding person is drawn.
pub const PERSON_BBOX: BBox = BBox::new(0.20, 0.25, 0.12, 0.50);

impl Scenario {
    pub fn empty(duration: f64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: "empty".into(),
            duration,
            target_intervals: Vec::new(),
            person_intervals: Vec::new(),
            operator_commands: Vec::new(),
            shot_script: Vec::new(),
        }
    }

    /// Target up for the whole run, weapon settled in Fire by 1 s, a person
    /// walks in at 1.0 s (a capture instant at 20 FPS) and leaves at 2.0 s.
    pub fn canonical_intrusion() -> Self {
        Self {
            name: "intrusion".into(),
            target_intervals: vec![Interval::new(0.0, 3.0)],
            person_intervals: vec![Interval::new(1.0, 2.0)],
            shot_script: vec![
                ScriptedShot { time: 0.1, hit: false },
                ScriptedShot { time: 0.6, hit: true },
                ScriptedShot { time: 0.9, hit: true },
                ScriptedShot { time: 1.5, hit: false },
                ScriptedShot { time: 2.8, hit: true },
            ],
            ..Self::empty(3.0)
        }
    }

    /// Same as [`Scenario::canonical_intrusion`] but the person appears just
    /// after a capture instant, so detection waits almost a full frame.
    pub fn late_intrusion() -> Self {
        let mut scenario = Self::canonical_intrusion();
        scenario.name = "late-intrusion".into();
        scenario.person_intervals = vec![Interval::new(1.0 + 1e-6, 2.0)];
        scenario
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "intrusion" => Some(Self::canonical_intrusion()),
            "late-intrusion" => Some(Self::late_intrusion()),
            "empty" => Some(Self::empty(3.0)),
            _ => None,
        }
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["intrusion", "late-intrusion", "empty"]
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidScenario(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        check_intervals("target_intervals", &self.target_intervals, self.duration)?;
        check_intervals("person_intervals", &self.person_intervals, self.duration)?;
        check_times(
            "operator_commands",
            self.operator_commands.iter().map(|c| c.time),
            self.duration,
        )?;
        check_times("shot_script", self.shot_script.iter().map(|s| s.time), self.duration)?;
        Ok(())
    }

    pub fn target_present(&self, t: f64) -> bool {
        self.target_intervals.iter().any(|i| i.contains(t))
    }

    pub fn person_present(&self, t: f64) -> bool {
        self.person_intervals.iter().any(|i| i.contains(t))
    }

    /// Ground truth at `t`.
    pub fn snapshot(&self, t: f64) -> SceneSnapshot {
        let mut entities = Vec::with_capacity(2);
        if self.person_present(t) {
            entities.push(SceneEntity { class: DetectionClass::person(), bbox: PERSON_BBOX });
        }
        if self.target_present(t) {
            entities.push(SceneEntity { class: DetectionClass::target(), bbox: TARGET_BBOX });
        }
        SceneSnapshot { time: t, entities }
    }

    /// Inserts a person interval keeping the list sorted and disjoint.
    pub fn add_person_interval(&mut self, interval: Interval) -> Result<(), SimError> {
        let mut intervals = self.person_intervals.clone();
        let at = intervals.partition_point(|i| i.start <= interval.start);
        intervals.insert(at, interval);
        check_intervals("person_intervals", &intervals, self.duration)?;
        self.person_intervals = intervals;
        Ok(())
    }
}

fn check_intervals(field: &str, intervals: &[Interval], duration: f64) -> Result<(), SimError> {
    let mut previous_end = 0.0;
    for (i, interval) in intervals.iter().enumerate() {
        if !(interval.start.is_finite() && interval.end.is_finite()) {
            return Err(SimError::InvalidScenario(format!("{field}[{i}] is not finite")));
        }
        if interval.start >= interval.end {
            return Err(SimError::InvalidScenario(format!("{field}[{i}] is empty or reversed")));
        }
        if interval.start < 0.0 || interval.end > duration {
            return Err(SimError::InvalidScenario(format!(
                "{field}[{i}] = [{}, {}) is outside [0, {duration}]",
                interval.start, interval.end
            )));
        }
        if i > 0 && interval.start < previous_end {
            return Err(SimError::InvalidScenario(format!(
                "{field}[{i}] overlaps or precedes the previous interval"
            )));
        }
        previous_end = interval.end;
    }
    Ok(())
}

fn check_times(field: &str, times: impl Iterator<Item = f64>, duration: f64) -> Result<(), SimError> {
    let mut previous = f64::NEG_INFINITY;
    for (i, t) in times.enumerate() {
        if !(0.0..=duration).contains(&t) {
            return Err(SimError::InvalidScenario(format!("{field}[{i}] at {t} is outside the run")));
        }
        if t < previous {
            return Err(SimError::InvalidScenario(format!("{field} is not sorted at index {i}")));
        }
        previous = t;
    }
    Ok(())
}
