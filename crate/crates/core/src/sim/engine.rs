//! Event-driven run of one lane: camera -> detector -> controller -> servo.
//!
//! Events carry exact timestamps. Ties are broken by a fixed rank and then by
//! insertion order, so a run is a pure function of scenario and config.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::SimConfig;
use super::log::{EventLog, LogEvent};
use super::metrics::{self, RiskReport};
use super::scenario::{Interval, OperatorCommand, Scenario, ScriptedShot};
use crate::actuator::{mode_of, CommandEffect, ServoState, WeaponMode};
use crate::error::SimError;
use crate::interlock::{self, ControllerEvent, ControllerState, DetectionFrame, Mode};
use crate::perception::{capture_time, sample_frame};

/// Watchdog ticks land this long after the stale deadline so that the
/// controller's strict `>` comparison trips.
pub const WATCHDOG_SLACK: f64 = 1e-6;

/// Captures up to this far past the run end still count as inside it.
const HORIZON_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
enum Pending {
    ServoArrive { token: u64 },
    Operator(OperatorCommand),
    Deliver { frame: u64, detections: DetectionFrame },
    Watchdog { frame_time: f64 },
    Capture { frame: u64 },
    Shot(ScriptedShot),
}

impl Pending {
    /// Same-instant order: servo settles first, shots see the final state.
    fn rank(&self) -> u8 {
        match self {
            Pending::ServoArrive { .. } => 0,
            Pending::Operator(_) => 1,
            Pending::Deliver { .. } => 2,
            Pending::Watchdog { .. } => 3,
            Pending::Capture { .. } => 4,
            Pending::Shot(_) => 5,
        }
    }
}

#[derive(Debug, Clone)]
struct Scheduled {
    time: f64,
    rank: u8,
    order: u64,
    what: Pending,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.rank.cmp(&other.rank))
            .then(self.order.cmp(&other.order))
    }
}

/// A lane simulation that can be advanced incrementally.
#[derive(Debug, Clone)]
pub struct Simulation {
    scenario: Scenario,
    config: SimConfig,
    rng: ChaCha8Rng,
    controller: ControllerState,
    servo: ServoState,
    weapon_mode: WeaponMode,
    motion_token: u64,
    queue: BinaryHeap<Reverse<Scheduled>>,
    next_order: u64,
    now: f64,
    log: EventLog,
    finished: bool,
}

impl Simulation {
    pub fn new(scenario: Scenario, config: SimConfig) -> Result<Self, SimError> {
        scenario.validate()?;
        config.validate()?;
        let controller = interlock::reset(&config.policy)?;
        let servo = ServoState::at_rest(config.servo.safe_angle, 0.0);
        let weapon_mode = mode_of(&servo, &config.servo);

        let mut log = EventLog::new();
        log.push(
            0.0,
            LogEvent::RunStart { scenario: scenario.clone(), config: config.clone(), weapon_mode },
        );

        let mut sim = Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            scenario,
            config,
            controller,
            servo,
            weapon_mode,
            motion_token: 0,
            queue: BinaryHeap::new(),
            next_order: 0,
            now: 0.0,
            log,
            finished: false,
        };
        sim.schedule(0.0, Pending::Capture { frame: 0 });
        for action in sim.scenario.operator_commands.clone() {
            sim.schedule(action.time, Pending::Operator(action.command));
        }
        for shot in sim.scenario.shot_script.clone() {
            sim.schedule(shot.time, Pending::Shot(shot));
        }
        Ok(sim)
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn controller(&self) -> &ControllerState {
        &self.controller
    }

    pub fn servo(&self) -> &ServoState {
        &self.servo
    }

    pub fn weapon_mode(&self) -> WeaponMode {
        self.weapon_mode
    }

    pub fn buzzer(&self) -> bool {
        self.controller.buzzer_on
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    fn schedule(&mut self, time: f64, what: Pending) {
        let order = self.next_order;
        self.next_order += 1;
        self.queue.push(Reverse(Scheduled { time, rank: what.rank(), order, what }));
    }

    /// Processes every event up to and including `until` (capped at the run
    /// duration) and moves the clock there.
    pub fn run_until(&mut self, until: f64) -> Result<(), SimError> {
        let until = until.min(self.scenario.duration);
        while let Some(Reverse(next)) = self.queue.peek() {
            if next.time > until {
                break;
            }
            let Reverse(event) = self.queue.pop().expect("peeked");
            self.process(event)?;
        }
        if until > self.now {
            self.now = until;
            self.settle(until)?;
        }
        Ok(())
    }

    /// Applies an operator command at the current simulation time.
    pub fn inject_operator(&mut self, command: OperatorCommand) -> Result<(), SimError> {
        let at = self.now;
        self.schedule(at, Pending::Operator(command));
        self.run_until(at)
    }

    /// Adds a person standing downrange from now for `duration` seconds
    /// (clipped to the run end). Returns the interval actually added.
    pub fn inject_person(&mut self, duration: f64) -> Result<Interval, SimError> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(SimError::InvalidScenario(alloc::format!(
                "intrusion duration must be positive, got {duration}"
            )));
        }
        let end = (self.now + duration).min(self.scenario.duration);
        if end <= self.now {
            return Err(SimError::InvalidScenario("run has already ended".into()));
        }
        let interval = Interval::new(self.now, end);
        self.scenario.add_person_interval(interval)?;
        self.log.push(self.now, LogEvent::PersonInjected { interval });
        Ok(interval)
    }

    /// Runs to the end and closes the log.
    pub fn finish(mut self) -> Result<(RiskReport, EventLog), SimError> {
        self.close()?;
        let report = metrics::risk_report(&self.log, &self.scenario, &self.config)?;
        Ok((report, self.log))
    }

    /// Runs to the scenario end and appends the run-end record.
    pub fn close(&mut self) -> Result<(), SimError> {
        if self.finished {
            return Ok(());
        }
        let end = self.scenario.duration;
        self.run_until(end)?;
        self.settle(end)?;
        self.log.push(end, LogEvent::RunEnd { weapon_mode: self.weapon_mode });
        self.finished = true;
        self.queue.clear();
        Ok(())
    }

    fn process(&mut self, event: Scheduled) -> Result<(), SimError> {
        let t = event.time;
        self.now = self.now.max(t);
        self.settle(t)?;
        match event.what {
            Pending::ServoArrive { token } => {
                if token == self.motion_token && !self.servo.is_idle() {
                    self.servo.angle = self.servo.target_angle.expect("moving servo has a target");
                    self.servo.target_angle = None;
                    self.finish_motion(t)?;
                }
            }
            Pending::Operator(command) => {
                self.log.push(t, LogEvent::Operator { command });
                let event = match command {
                    OperatorCommand::Arm => ControllerEvent::OperatorArm { at: t },
                    OperatorCommand::Disarm => ControllerEvent::OperatorDisarm { at: t },
                };
                self.step_controller(t, &event)?;
            }
            Pending::Deliver { frame, detections } => {
                let arrival = ControllerEvent::FrameArrived(detections.clone());
                self.log.push(t, LogEvent::FrameAvailable { frame, detections });
                let outcome = interlock::step(&self.controller, &arrival, &self.config.policy)?;
                let assessment = outcome.assessment.unwrap_or_default();
                self.controller = outcome.state;
                self.log.push(
                    t,
                    LogEvent::Decision {
                        frame,
                        arm_present: assessment.arm_present,
                        veto_present: assessment.veto_present,
                        commanded: self.controller.commanded_mode,
                        consecutive_arm_frames: self.controller.consecutive_arm_frames,
                    },
                );
                if let Some(mode) = outcome.command {
                    self.log.push(t, LogEvent::ModeCommand { mode });
                    self.drive_servo(t, mode)?;
                }
                let deadline = t + self.config.policy.stale_timeout + WATCHDOG_SLACK;
                self.schedule(deadline, Pending::Watchdog { frame_time: t });
            }
            Pending::Watchdog { frame_time } => {
                if self.controller.last_frame_time == Some(frame_time) {
                    self.log.push(t, LogEvent::Tick);
                    self.step_controller(t, &ControllerEvent::Tick { now: t })?;
                }
            }
            Pending::Capture { frame } => {
                let truth = self.scenario.snapshot(t);
                let detections =
                    sample_frame(&truth, &self.config.profile, &self.config.policy, &mut self.rng)?;
                self.log.push(
                    t,
                    LogEvent::FrameCaptured {
                        frame,
                        truth: truth.entities.into_iter().map(|e| e.class).collect(),
                    },
                );
                self.schedule(detections.available_time, Pending::Deliver { frame, detections });
                let next = capture_time(&self.config.profile, 0.0, frame + 1);
                if next <= self.scenario.duration + HORIZON_EPS {
                    self.schedule(next, Pending::Capture { frame: frame + 1 });
                }
            }
            Pending::Shot(shot) => {
                let event = if self.weapon_mode == WeaponMode::Fire {
                    LogEvent::ShotFired { hit: shot.hit }
                } else {
                    LogEvent::ShotSuppressed { weapon_mode: self.weapon_mode }
                };
                self.log.push(t, event);
            }
        }
        Ok(())
    }

    fn step_controller(&mut self, t: f64, event: &ControllerEvent) -> Result<(), SimError> {
        let outcome = interlock::step(&self.controller, event, &self.config.policy)?;
        self.controller = outcome.state;
        if let Some(mode) = outcome.command {
            self.log.push(t, LogEvent::ModeCommand { mode });
            self.drive_servo(t, mode)?;
        }
        Ok(())
    }

    /// Moves the servo to `t`; closes the motion if it finished on the way.
    fn settle(&mut self, t: f64) -> Result<(), SimError> {
        if t < self.servo.last_update {
            return Ok(());
        }
        let was_moving = !self.servo.is_idle();
        self.servo = self.servo.advance_to(t, &self.config.servo)?;
        if was_moving && self.servo.is_idle() {
            self.finish_motion(t)?;
        }
        Ok(())
    }

    fn drive_servo(&mut self, t: f64, mode: Mode) -> Result<(), SimError> {
        let spec = self.config.servo;
        let from = self.servo.angle;
        let (servo, effect) = self.servo.apply_command(mode, &spec);
        self.servo = servo;
        match effect {
            CommandEffect::Started => {
                self.log.push(t, LogEvent::MotionStart { from, to: spec.angle_for(mode) });
                self.begin_motion(t);
            }
            CommandEffect::Preempted => {
                self.log.push(t, LogEvent::MotionPreempted { angle: from, to: spec.angle_for(mode) });
                self.motion_token += 1;
                if self.servo.is_idle() {
                    self.finish_motion(t)?;
                } else {
                    self.begin_motion(t);
                }
            }
            CommandEffect::Discarded => self.log.push(t, LogEvent::CommandDiscarded { mode }),
            CommandEffect::NoChange => {}
        }
        Ok(())
    }

    fn begin_motion(&mut self, t: f64) {
        self.motion_token += 1;
        let eta = self.servo.time_to_target(&self.config.servo).unwrap_or(0.0);
        self.schedule(t + eta, Pending::ServoArrive { token: self.motion_token });
        self.set_weapon_mode(t, WeaponMode::Transitioning);
    }

    fn finish_motion(&mut self, t: f64) -> Result<(), SimError> {
        self.motion_token += 1;
        self.log.push(t, LogEvent::MotionEnd { angle: self.servo.angle });
        self.set_weapon_mode(t, mode_of(&self.servo, &self.config.servo));

        // A Fire command dropped mid-motion is re-sent only if the controller
        // still wants Fire once the servo is at rest.
        let intent = self.controller.commanded_mode;
        let settled = match self.weapon_mode {
            WeaponMode::Safe => Some(Mode::Safe),
            WeaponMode::Fire => Some(Mode::Fire),
            WeaponMode::Transitioning => None,
        };
        if settled != Some(intent) {
            self.log.push(t, LogEvent::Reissue { mode: intent });
            self.drive_servo(t, intent)?;
        }
        Ok(())
    }

    fn set_weapon_mode(&mut self, t: f64, mode: WeaponMode) {
        if mode != self.weapon_mode {
            self.log.push(t, LogEvent::WeaponModeChanged { from: self.weapon_mode, to: mode });
            self.weapon_mode = mode;
        }
    }
}

/// Runs `scenario` to completion.
pub fn run(scenario: &Scenario, config: &SimConfig) -> Result<(RiskReport, EventLog), SimError> {
    Simulation::new(scenario.clone(), config.clone())?.finish()
}

/// Feeds the log's controller inputs through a fresh controller and checks
/// that it emits exactly the logged mode commands.
pub fn verify_controller_conformance(log: &EventLog) -> Result<(), SimError> {
    let (_, config, _) = log.header()?;
    let policy = &config.policy;
    let mut state = interlock::reset(policy)?;
    let mut replayed = Vec::new();
    for record in log.records() {
        let event = match &record.event {
            LogEvent::FrameAvailable { detections, .. } => ControllerEvent::FrameArrived(detections.clone()),
            LogEvent::Tick => ControllerEvent::Tick { now: record.time },
            LogEvent::Operator { command: OperatorCommand::Arm } => ControllerEvent::OperatorArm { at: record.time },
            LogEvent::Operator { command: OperatorCommand::Disarm } => {
                ControllerEvent::OperatorDisarm { at: record.time }
            }
            _ => continue,
        };
        if let Some(mode) = state.apply(&event, policy)? {
            replayed.push((record.time, mode));
        }
    }
    let logged: Vec<_> = log.controller_commands().collect();
    if logged.len() != replayed.len() {
        return Err(SimError::MalformedLog(alloc::format!(
            "controller conformance: log has {} mode commands, replay produced {}",
            logged.len(),
            replayed.len()
        )));
    }
    for (i, (a, b)) in logged.iter().zip(&replayed).enumerate() {
        if a != b {
            return Err(SimError::MalformedLog(alloc::format!(
                "controller conformance: command {i} logged as {} at {}, replay gives {} at {}",
                a.1, a.0, b.1, b.0
            )));
        }
    }
    Ok(())
}
