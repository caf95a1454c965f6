//! Safe/Fire decision kernel.
//!
//! The controller is a pure function of `(state, event, policy)`. Disarming
//! (veto, target loss, stale camera, operator latch) takes effect on the step
//! that observes it; arming needs `confirm_frames` consecutive clean frames.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::InterlockError;

/// Detection label such as `person` or `target`.
///
/// Labels are lowercase ASCII words joined by `-` (`police-officer`). Which
/// labels are known is decided by the [`DecisionPolicy`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DetectionClass(String);

impl DetectionClass {
    pub const PERSON: &'static str = "person";
    pub const TARGET: &'static str = "target";

    pub fn new(label: &str) -> Result<Self, InterlockError> {
        let well_formed = !label.is_empty()
            && !label.starts_with('-')
            && !label.ends_with('-')
            && label
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-');
        if well_formed {
            Ok(Self(label.into()))
        } else {
            Err(InterlockError::MalformedLabel(label.into()))
        }
    }

    pub fn person() -> Self {
        Self(Self::PERSON.into())
    }

    pub fn target() -> Self {
        Self(Self::TARGET.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for DetectionClass {
    type Error = InterlockError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(&value)
    }
}

impl From<DetectionClass> for String {
    fn from(value: DetectionClass) -> Self {
        value.0
    }
}

impl fmt::Display for DetectionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Axis-aligned box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    /// True when the box has positive extent and lies inside the unit square.
    pub fn is_valid(&self) -> bool {
        let finite = self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite();
        finite
            && self.w > 0.0
            && self.h > 0.0
            && self.x >= 0.0
            && self.y >= 0.0
            && self.x + self.w <= 1.0
            && self.y + self.h <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: DetectionClass,
    pub confidence: f64,
    pub bbox: BBox,
}

impl Detection {
    pub fn new(class: DetectionClass, confidence: f64, bbox: BBox) -> Self {
        Self { class, confidence, bbox }
    }

    pub fn validate(&self) -> Result<(), InterlockError> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(InterlockError::ConfidenceOutOfRange(self.confidence));
        }
        if !self.bbox.is_valid() {
            return Err(InterlockError::InvalidBBox);
        }
        Ok(())
    }
}

/// Everything the detector reported for one captured image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    /// Simulation time at which the image was exposed.
    pub capture_time: f64,
    /// Time the detections reach the controller (capture + camera + inference).
    pub available_time: f64,
    pub detections: Vec<Detection>,
}

impl DetectionFrame {
    pub fn new(capture_time: f64, available_time: f64, detections: Vec<Detection>) -> Self {
        Self { capture_time, available_time, detections }
    }

    pub fn validate(&self) -> Result<(), InterlockError> {
        if !self.capture_time.is_finite() || !self.available_time.is_finite() {
            return Err(InterlockError::NonFiniteTime);
        }
        if self.available_time < self.capture_time {
            return Err(InterlockError::FrameTimeOrder {
                capture: self.capture_time,
                available: self.available_time,
            });
        }
        self.detections.iter().try_for_each(Detection::validate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecisionPolicy {
    pub confidence_threshold: f64,
    pub veto_classes: BTreeSet<DetectionClass>,
    pub arm_classes: BTreeSet<DetectionClass>,
    /// Consecutive clean target frames required before arming.
    pub confirm_frames: u32,
    /// Seconds without a frame after which the weapon is forced Safe.
    pub stale_timeout: f64,
}

impl DecisionPolicy {
    pub const DEFAULT_THRESHOLD: f64 = 0.5;
    pub const DEFAULT_CONFIRM_FRAMES: u32 = 2;
    pub const STALE_FRAME_PERIODS: f64 = 3.0;

    /// Default policy with the stale timeout set to three frame periods.
    pub fn for_frame_period(frame_period: f64) -> Self {
        Self {
            stale_timeout: Self::STALE_FRAME_PERIODS * frame_period,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), InterlockError> {
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(InterlockError::InvalidPolicy("confidence_threshold must lie in [0, 1]"));
        }
        if self.confirm_frames == 0 {
            return Err(InterlockError::InvalidPolicy("confirm_frames must be at least 1"));
        }
        if !(self.stale_timeout.is_finite() && self.stale_timeout > 0.0) {
            return Err(InterlockError::InvalidPolicy("stale_timeout must be positive"));
        }
        if self.arm_classes.is_empty() {
            return Err(InterlockError::InvalidPolicy("arm_classes must not be empty"));
        }
        if self.veto_classes.intersection(&self.arm_classes).next().is_some() {
            return Err(InterlockError::InvalidPolicy("veto_classes and arm_classes overlap"));
        }
        Ok(())
    }

    /// Known labels in sorted order: veto classes first, then arm classes.
    pub fn known_classes(&self) -> Vec<DetectionClass> {
        self.veto_classes.iter().chain(self.arm_classes.iter()).cloned().collect()
    }

    pub fn knows(&self, class: &DetectionClass) -> bool {
        self.veto_classes.contains(class) || self.arm_classes.contains(class)
    }
}

impl Default for DecisionPolicy {
    fn default() -> Self {
        Self {
            confidence_threshold: Self::DEFAULT_THRESHOLD,
            veto_classes: [DetectionClass::person()].into_iter().collect(),
            arm_classes: [DetectionClass::target()].into_iter().collect(),
            confirm_frames: Self::DEFAULT_CONFIRM_FRAMES,
            stale_timeout: Self::STALE_FRAME_PERIODS / 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FrameAssessment {
    pub arm_present: bool,
    pub veto_present: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    Safe,
    Fire,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Safe => "Safe",
            Mode::Fire => "Fire",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ControllerEvent {
    /// A frame reached the controller; its time is `available_time`.
    FrameArrived(DetectionFrame),
    Tick { now: f64 },
    OperatorArm { at: f64 },
    OperatorDisarm { at: f64 },
}

impl ControllerEvent {
    pub fn time(&self) -> f64 {
        match self {
            ControllerEvent::FrameArrived(frame) => frame.available_time,
            ControllerEvent::Tick { now } => *now,
            ControllerEvent::OperatorArm { at } | ControllerEvent::OperatorDisarm { at } => *at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub commanded_mode: Mode,
    pub operator_disarmed: bool,
    pub consecutive_arm_frames: u32,
    pub last_frame_time: Option<f64>,
    pub buzzer_on: bool,
    /// Time of the latest processed event, used to reject regressions.
    pub clock: Option<f64>,
}

/// Result of one controller step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub state: ControllerState,
    /// Present only when the commanded mode changed.
    pub command: Option<Mode>,
    pub buzzer: bool,
    /// Assessment of the triggering frame, if the event was a frame.
    pub assessment: Option<FrameAssessment>,
}

/// Initial controller state: Safe, unlatched, buzzer off.
pub fn reset(policy: &DecisionPolicy) -> Result<ControllerState, InterlockError> {
    policy.validate()?;
    Ok(ControllerState {
        commanded_mode: Mode::Safe,
        operator_disarmed: false,
        consecutive_arm_frames: 0,
        last_frame_time: None,
        buzzer_on: false,
        clock: None,
    })
}

pub fn evaluate_frame(
    frame: &DetectionFrame,
    policy: &DecisionPolicy,
) -> Result<FrameAssessment, InterlockError> {
    frame.validate()?;
    let mut assessment = FrameAssessment::default();
    for detection in &frame.detections {
        if !policy.knows(&detection.class) {
            return Err(InterlockError::UnknownClass(detection.class.as_str().into()));
        }
        if detection.confidence < policy.confidence_threshold {
            continue;
        }
        if policy.veto_classes.contains(&detection.class) {
            assessment.veto_present = true;
        } else {
            assessment.arm_present = true;
        }
    }
    Ok(assessment)
}

/// Advance the controller by one event.
///
/// On error the caller's state is untouched.
pub fn step(
    state: &ControllerState,
    event: &ControllerEvent,
    policy: &DecisionPolicy,
) -> Result<StepOutcome, InterlockError> {
    let now = event.time();
    if !now.is_finite() {
        return Err(InterlockError::NonFiniteTime);
    }
    if let Some(clock) = state.clock {
        if now < clock {
            return Err(InterlockError::TimeRegression { last: clock, now });
        }
    }

    let mut next = state.clone();
    next.clock = Some(now);
    let mut assessment = None;

    match event {
        ControllerEvent::FrameArrived(frame) => {
            let seen = evaluate_frame(frame, policy)?;
            assessment = Some(seen);
            next.last_frame_time = Some(frame.available_time);
            if seen.veto_present || !seen.arm_present || next.operator_disarmed {
                next.consecutive_arm_frames = 0;
                next.commanded_mode = Mode::Safe;
            } else {
                next.consecutive_arm_frames =
                    (next.consecutive_arm_frames + 1).min(policy.confirm_frames);
                if next.consecutive_arm_frames >= policy.confirm_frames {
                    next.commanded_mode = Mode::Fire;
                }
            }
        }
        ControllerEvent::Tick { now } => {
            if let Some(last) = next.last_frame_time {
                if now - last > policy.stale_timeout {
                    next.consecutive_arm_frames = 0;
                    next.commanded_mode = Mode::Safe;
                }
            }
        }
        ControllerEvent::OperatorDisarm { .. } => {
            next.operator_disarmed = true;
            next.consecutive_arm_frames = 0;
            next.commanded_mode = Mode::Safe;
        }
        ControllerEvent::OperatorArm { .. } => {
            // Clearing the latch never arms by itself; fresh confirmation is required.
            next.operator_disarmed = false;
            next.consecutive_arm_frames = 0;
        }
    }

    next.buzzer_on = next.commanded_mode == Mode::Fire;
    let command = (next.commanded_mode != state.commanded_mode).then_some(next.commanded_mode);
    Ok(StepOutcome {
        buzzer: next.buzzer_on,
        state: next,
        command,
        assessment,
    })
}

impl ControllerState {
    pub fn new(policy: &DecisionPolicy) -> Result<Self, InterlockError> {
        reset(policy)
    }

    /// Applies `event` in place, returning the emitted mode command.
    pub fn apply(
        &mut self,
        event: &ControllerEvent,
        policy: &DecisionPolicy,
    ) -> Result<Option<Mode>, InterlockError> {
        let outcome = step(self, event, policy)?;
        *self = outcome.state;
        Ok(outcome.command)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn det(label: &str, confidence: f64) -> Detection {
        Detection::new(DetectionClass::new(label).unwrap(), confidence, BBox::new(0.4, 0.4, 0.2, 0.2))
    }

    fn frame(at: f64, detections: Vec<Detection>) -> ControllerEvent {
        ControllerEvent::FrameArrived(DetectionFrame::new(at, at, detections))
    }

    fn fire_state(policy: &DecisionPolicy) -> ControllerState {
        let mut state = reset(policy).unwrap();
        state.apply(&frame(0.0, vec![det("target", 0.9)]), policy).unwrap();
        assert_eq!(state.apply(&frame(0.05, vec![det("target", 0.9)]), policy).unwrap(), Some(Mode::Fire));
        state
    }

    #[test]
    fn reset_is_safe_and_idempotent() {
        let policy = DecisionPolicy::default();
        let a = reset(&policy).unwrap();
        assert_eq!(a.commanded_mode, Mode::Safe);
        assert!(!a.buzzer_on);
        assert!(!a.operator_disarmed);
        assert_eq!(a.consecutive_arm_frames, 0);
        assert_eq!(a, reset(&policy).unwrap());
    }

    #[test]
    fn reset_rejects_bad_policies() {
        let mut overlap = DecisionPolicy::default();
        overlap.veto_classes.insert(DetectionClass::target());
        assert!(matches!(reset(&overlap), Err(InterlockError::InvalidPolicy(_))));

        let zero = DecisionPolicy { confirm_frames: 0, ..DecisionPolicy::default() };
        assert!(reset(&zero).is_err());

        let stale = DecisionPolicy { stale_timeout: 0.0, ..DecisionPolicy::default() };
        assert!(reset(&stale).is_err());
    }

    #[test]
    fn default_stale_timeout_is_three_periods_at_20_fps() {
        let policy = DecisionPolicy::default();
        assert!((policy.stale_timeout - 0.15).abs() < 1e-12);
        assert_eq!(DecisionPolicy::for_frame_period(0.1).stale_timeout, 3.0 * 0.1);
    }

    #[test]
    fn assessment_examples() {
        let policy = DecisionPolicy::default();
        let eval = |ds| evaluate_frame(&DetectionFrame::new(0.0, 0.0, ds), &policy).unwrap();
        assert_eq!(eval(vec![det("target", 0.9)]), FrameAssessment { arm_present: true, veto_present: false });
        assert_eq!(
            eval(vec![det("target", 0.9), det("person", 0.8)]),
            FrameAssessment { arm_present: true, veto_present: true }
        );
        assert_eq!(eval(vec![]), FrameAssessment::default());
        assert_eq!(eval(vec![det("person", 0.3)]), FrameAssessment::default());
    }

    #[test]
    fn unknown_label_is_rejected() {
        let policy = DecisionPolicy::default();
        let frame = DetectionFrame::new(0.0, 0.1, vec![det("dog", 0.9)]);
        assert_eq!(evaluate_frame(&frame, &policy), Err(InterlockError::UnknownClass("dog".into())));
        assert!(DetectionClass::new("Person").is_err());
        assert!(DetectionClass::new("").is_err());
        assert!(DetectionClass::new("police-officer").is_ok());
    }

    #[test]
    fn invalid_frames_are_rejected() {
        let policy = DecisionPolicy::default();
        let backwards = DetectionFrame::new(1.0, 0.5, vec![]);
        assert!(matches!(evaluate_frame(&backwards, &policy), Err(InterlockError::FrameTimeOrder { .. })));
        let mut wide = det("target", 0.9);
        wide.bbox = BBox::new(0.5, 0.5, 0.6, 0.1);
        assert_eq!(
            evaluate_frame(&DetectionFrame::new(0.0, 0.0, vec![wide]), &policy),
            Err(InterlockError::InvalidBBox)
        );
        let overconfident = det("target", 1.5);
        assert!(evaluate_frame(&DetectionFrame::new(0.0, 0.0, vec![overconfident]), &policy).is_err());
    }

    #[test]
    fn two_target_frames_arm_with_buzzer() {
        let policy = DecisionPolicy::default();
        let state = reset(&policy).unwrap();
        let first = step(&state, &frame(0.0, vec![det("target", 0.9)]), &policy).unwrap();
        assert_eq!(first.command, None);
        assert!(!first.buzzer);
        let second = step(&first.state, &frame(0.05, vec![det("target", 0.9)]), &policy).unwrap();
        assert_eq!(second.command, Some(Mode::Fire));
        assert!(second.buzzer && second.state.buzzer_on);
    }

    #[test]
    fn person_disarms_without_debounce() {
        let policy = DecisionPolicy::default();
        let state = fire_state(&policy);
        let out = step(&state, &frame(0.1, vec![det("target", 0.9), det("person", 0.8)]), &policy).unwrap();
        assert_eq!(out.command, Some(Mode::Safe));
        assert_eq!(out.state.consecutive_arm_frames, 0);
        assert!(!out.buzzer);
    }

    #[test]
    fn target_loss_disarms() {
        let policy = DecisionPolicy::default();
        let state = fire_state(&policy);
        let out = step(&state, &frame(0.1, vec![]), &policy).unwrap();
        assert_eq!(out.command, Some(Mode::Safe));
    }

    #[test]
    fn operator_latch_holds_until_arm() {
        let policy = DecisionPolicy::default();
        let mut state = fire_state(&policy);
        assert_eq!(state.apply(&ControllerEvent::OperatorDisarm { at: 0.1 }, &policy).unwrap(), Some(Mode::Safe));
        for k in 0..10 {
            let cmd = state.apply(&frame(0.15 + 0.05 * k as f64, vec![det("target", 0.9)]), &policy).unwrap();
            assert_eq!(cmd, None);
        }
        assert!(state.operator_disarmed);
        assert_eq!(state.apply(&ControllerEvent::OperatorArm { at: 1.0 }, &policy).unwrap(), None);
        assert_eq!(state.apply(&frame(1.05, vec![det("target", 0.9)]), &policy).unwrap(), None);
        assert_eq!(state.apply(&frame(1.10, vec![det("target", 0.9)]), &policy).unwrap(), Some(Mode::Fire));
    }

    #[test]
    fn stale_tick_forces_safe() {
        let policy = DecisionPolicy { stale_timeout: 0.25, ..DecisionPolicy::default() };
        let mut state = fire_state(&policy);
        state.apply(&frame(0.5, vec![det("target", 0.9)]), &policy).unwrap();
        let last = state.last_frame_time.unwrap();
        let at_limit = step(&state, &ControllerEvent::Tick { now: last + policy.stale_timeout }, &policy).unwrap();
        assert_eq!(at_limit.command, None);
        let past = step(&state, &ControllerEvent::Tick { now: last + policy.stale_timeout + 1e-6 }, &policy).unwrap();
        assert_eq!(past.command, Some(Mode::Safe));
    }

    #[test]
    fn time_regression_is_an_error() {
        let policy = DecisionPolicy::default();
        let state = fire_state(&policy);
        let err = step(&state, &ControllerEvent::Tick { now: 0.01 }, &policy).unwrap_err();
        assert!(matches!(err, InterlockError::TimeRegression { .. }));
    }

    #[test]
    fn first_frame_with_both_classes_stays_safe() {
        let policy = DecisionPolicy { confirm_frames: 1, ..DecisionPolicy::default() };
        let state = reset(&policy).unwrap();
        let out = step(&state, &frame(0.0, vec![det("target", 0.99), det("person", 0.6)]), &policy).unwrap();
        assert_eq!(out.command, None);
        assert_eq!(out.state.commanded_mode, Mode::Safe);
    }

    #[test]
    fn extra_veto_label_is_honored() {
        let mut policy = DecisionPolicy::default();
        policy.veto_classes.insert(DetectionClass::new("police-officer").unwrap());
        let state = fire_state(&policy);
        let out = step(&state, &frame(0.1, vec![det("target", 0.9), det("police-officer", 0.7)]), &policy).unwrap();
        assert_eq!(out.command, Some(Mode::Safe));
    }
}
