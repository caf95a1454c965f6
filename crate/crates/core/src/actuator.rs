//! Safety-pin servo model.
//!
//! Pulse widths are in microseconds within a 20 ms frame. The map is flat at
//! 0° over [500, 1000], linear at 0.18 °/µs over [1000, 2000] (1500 µs is the
//! 90° neutral point) and flat at 180° over [2000, 2500].

use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ActuatorError;
use crate::interlock::Mode;

pub const PULSE_MIN_US: f64 = 500.0;
pub const PULSE_MAX_US: f64 = 2500.0;
pub const LINEAR_LOW_US: f64 = 1000.0;
pub const LINEAR_HIGH_US: f64 = 2000.0;
pub const DEGREES_PER_US: f64 = 0.18;
pub const ANGLE_MAX: f64 = 180.0;

/// Tolerance used when comparing a resting angle against a mode angle.
const ANGLE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServoSpec {
    pub period_ms: f64,
    /// Seconds to sweep 60 degrees.
    pub speed_s_per_60deg: f64,
    pub voltage: f64,
    pub torque_kg_cm: f64,
    pub safe_angle: f64,
    pub fire_angle: f64,
}

impl Default for ServoSpec {
    fn default() -> Self {
        Self {
            period_ms: 20.0,
            speed_s_per_60deg: 0.15,
            voltage: 4.8,
            torque_kg_cm: 17.2,
            safe_angle: 0.0,
            fire_angle: 40.0,
        }
    }
}

impl ServoSpec {
    pub fn validate(&self) -> Result<(), ActuatorError> {
        if !(self.speed_s_per_60deg.is_finite() && self.speed_s_per_60deg > 0.0) {
            return Err(ActuatorError::InvalidSpec("speed must be positive"));
        }
        if !(self.period_ms.is_finite() && self.period_ms > 0.0) {
            return Err(ActuatorError::InvalidSpec("period must be positive"));
        }
        let in_range = |a: f64| (0.0..=ANGLE_MAX).contains(&a);
        if !in_range(self.safe_angle) || !in_range(self.fire_angle) {
            return Err(ActuatorError::InvalidSpec("mode angles must lie in [0, 180]"));
        }
        if self.safe_angle == self.fire_angle {
            return Err(ActuatorError::InvalidSpec("safe and fire angles must differ"));
        }
        Ok(())
    }

    /// Slew rate in degrees per second.
    pub fn rate(&self) -> f64 {
        60.0 / self.speed_s_per_60deg
    }

    pub fn angle_for(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Safe => self.safe_angle,
            Mode::Fire => self.fire_angle,
        }
    }
}

/// Validated pulse width in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PwmCommand(f64);

impl PwmCommand {
    pub fn new(pulse_us: f64) -> Result<Self, ActuatorError> {
        if (PULSE_MIN_US..=PULSE_MAX_US).contains(&pulse_us) {
            Ok(Self(pulse_us))
        } else {
            Err(ActuatorError::PulseOutOfRange(pulse_us))
        }
    }

    pub fn pulse_width(self) -> f64 {
        self.0
    }

    pub fn angle(self) -> f64 {
        if self.0 <= LINEAR_LOW_US {
            0.0
        } else if self.0 >= LINEAR_HIGH_US {
            ANGLE_MAX
        } else {
            (self.0 - LINEAR_LOW_US) * DEGREES_PER_US
        }
    }

    /// Fraction of the PWM period the line is held high.
    pub fn duty_cycle(self, spec: &ServoSpec) -> f64 {
        self.0 / (spec.period_ms * 1000.0)
    }
}

impl TryFrom<f64> for PwmCommand {
    type Error = ActuatorError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<PwmCommand> for f64 {
    fn from(value: PwmCommand) -> Self {
        value.0
    }
}

pub fn pulse_to_angle(pulse_us: f64) -> Result<f64, ActuatorError> {
    PwmCommand::new(pulse_us).map(PwmCommand::angle)
}

/// Canonical pulse for `angle`, always on the linear segment.
pub fn angle_to_pulse(angle: f64) -> Result<f64, ActuatorError> {
    if !(0.0..=ANGLE_MAX).contains(&angle) {
        return Err(ActuatorError::AngleOutOfRange(angle));
    }
    Ok(LINEAR_LOW_US + angle / DEGREES_PER_US)
}

pub fn transition_time(from: f64, to: f64, spec: &ServoSpec) -> f64 {
    (to - from).abs() / 60.0 * spec.speed_s_per_60deg
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeaponMode {
    Safe,
    Fire,
    Transitioning,
}

impl fmt::Display for WeaponMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeaponMode::Safe => "Safe",
            WeaponMode::Fire => "Fire",
            WeaponMode::Transitioning => "Transitioning",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoState {
    pub angle: f64,
    /// `None` while idle.
    pub target_angle: Option<f64>,
    pub last_update: f64,
}

/// What a mode command did to the servo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommandEffect {
    /// Motion toward the commanded angle began from rest.
    Started,
    /// In-flight motion was replaced by motion toward the safe angle.
    Preempted,
    /// Fire command arrived mid-motion and was dropped.
    Discarded,
    /// Already at (or heading to) the commanded angle.
    NoChange,
}

impl ServoState {
    pub fn at_rest(angle: f64, time: f64) -> Self {
        Self { angle, target_angle: None, last_update: time }
    }

    pub fn is_idle(&self) -> bool {
        self.target_angle.is_none()
    }

    /// Seconds until the current motion completes, `None` when idle.
    pub fn time_to_target(&self, spec: &ServoSpec) -> Option<f64> {
        self.target_angle.map(|target| (target - self.angle).abs() / spec.rate())
    }

    pub fn advance(&self, dt: f64, spec: &ServoSpec) -> Result<Self, ActuatorError> {
        if dt.is_nan() || dt < 0.0 {
            return Err(ActuatorError::NegativeStep(dt));
        }
        let mut next = *self;
        next.last_update += dt;
        if let Some(target) = self.target_angle {
            let remaining = (target - self.angle).abs();
            let travel = spec.rate() * dt;
            if travel >= remaining {
                next.angle = target;
                next.target_angle = None;
            } else {
                next.angle += if target > self.angle { travel } else { -travel };
            }
        }
        Ok(next)
    }

    /// Moves the servo to `time`, which must not precede `last_update`.
    pub fn advance_to(&self, time: f64, spec: &ServoSpec) -> Result<Self, ActuatorError> {
        self.advance(time - self.last_update, spec)
    }

    pub fn apply_command(&self, mode: Mode, spec: &ServoSpec) -> (Self, CommandEffect) {
        let goal = spec.angle_for(mode);
        let mut next = *self;
        match (mode, self.target_angle) {
            (Mode::Safe, Some(target)) if target == goal => (next, CommandEffect::NoChange),
            (Mode::Safe, Some(_)) => {
                if (self.angle - goal).abs() <= ANGLE_EPS {
                    next.angle = goal;
                    next.target_angle = None;
                } else {
                    next.target_angle = Some(goal);
                }
                (next, CommandEffect::Preempted)
            }
            (Mode::Fire, Some(_)) => (next, CommandEffect::Discarded),
            (_, None) if (self.angle - goal).abs() <= ANGLE_EPS => (next, CommandEffect::NoChange),
            (_, None) => {
                next.target_angle = Some(goal);
                (next, CommandEffect::Started)
            }
        }
    }

    /// Applies a mode command. Safe always wins; Fire is dropped while moving.
    pub fn command(&self, mode: Mode, spec: &ServoSpec) -> Self {
        self.apply_command(mode, spec).0
    }

    pub fn mode(&self, spec: &ServoSpec) -> WeaponMode {
        mode_of(self, spec)
    }
}

pub fn mode_of(servo: &ServoState, spec: &ServoSpec) -> WeaponMode {
    if !servo.is_idle() {
        WeaponMode::Transitioning
    } else if (servo.angle - spec.safe_angle).abs() <= ANGLE_EPS {
        WeaponMode::Safe
    } else if (servo.angle - spec.fire_angle).abs() <= ANGLE_EPS {
        WeaponMode::Fire
    } else {
        WeaponMode::Transitioning
    }
}
