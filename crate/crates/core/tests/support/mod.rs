//! Test-only oracles.
//!
//! `dense_replay` re-simulates a lane on a fixed 1 ms grid with its own servo
//! integration and event handling. It shares only the decision kernel and the
//! detector sampler with the event-driven engine.

#![allow(dead_code)]

use interlock_core::interlock::{self, ControllerEvent, DecisionPolicy, Mode};
use interlock_core::perception::{sample_frame, DetectorProfile};
use interlock_core::sim::{Interval, OperatorCommand, Scenario, ScriptedShot, SimConfig, SCHEMA_VERSION};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DENSE_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenseMode {
    Safe,
    Fire,
    Moving,
}

pub struct DenseRun {
    /// Weapon mode sampled at `k * DENSE_STEP` after that step's events.
    pub samples: Vec<DenseMode>,
    pub fire_intervals: Vec<Interval>,
}

impl DenseRun {
    pub fn exposure_by_person(&self, scenario: &Scenario) -> Vec<f64> {
        scenario
            .person_intervals
            .iter()
            .map(|p| self.fire_intervals.iter().map(|f| f.overlap(p)).sum())
            .collect()
    }

    /// Seconds from `entry` until the first Safe sample, on the grid.
    pub fn reaction(&self, entry: f64) -> Option<f64> {
        let k0 = (entry / DENSE_STEP).ceil() as usize;
        if k0 > 0 && self.samples[k0 - 1] == DenseMode::Safe && self.samples.get(k0) == Some(&DenseMode::Safe) {
            return Some(0.0);
        }
        self.samples[k0..]
            .iter()
            .position(|m| *m == DenseMode::Safe)
            .map(|i| (k0 + i) as f64 * DENSE_STEP - entry)
    }
}

struct DenseServo {
    angle: f64,
    target: Option<f64>,
}

impl DenseServo {
    fn command(&mut self, mode: Mode, safe: f64, fire: f64) {
        match mode {
            Mode::Safe => {
                if self.target.is_some() || self.angle != safe {
                    self.target = if self.angle == safe { None } else { Some(safe) };
                }
            }
            Mode::Fire => {
                if self.target.is_none() && self.angle != fire {
                    self.target = Some(fire);
                }
            }
        }
    }

    /// Returns true when the motion completed during this step.
    fn integrate(&mut self, travel: f64) -> bool {
        let Some(target) = self.target else { return false };
        let remaining = (target - self.angle).abs();
        if remaining <= travel + 1e-9 {
            self.angle = target;
            self.target = None;
            true
        } else {
            self.angle += travel * (target - self.angle).signum();
            false
        }
    }

    fn mode(&self, safe: f64, fire: f64) -> DenseMode {
        match self.target {
            Some(_) => DenseMode::Moving,
            None if self.angle == safe => DenseMode::Safe,
            None if self.angle == fire => DenseMode::Fire,
            None => DenseMode::Moving,
        }
    }
}

/// Fixed-step re-simulation of `scenario` under `config`.
pub fn dense_replay(scenario: &Scenario, config: &SimConfig) -> DenseRun {
    let policy = &config.policy;
    let spec = &config.servo;
    let (safe, fire) = (spec.safe_angle, spec.fire_angle);
    let travel = 60.0 / spec.speed_s_per_60deg * DENSE_STEP;
    let period = 1.0 / config.profile.fps;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut controller = interlock::reset(policy).unwrap();
    let mut servo = DenseServo { angle: safe, target: None };
    let mut next_capture = 0u64;
    let mut in_flight: Vec<(f64, u8, ControllerEvent)> = Vec::new();
    let mut operator = scenario.operator_commands.iter().peekable();

    let steps = (scenario.duration / DENSE_STEP).round() as usize;
    let mut samples = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * DENSE_STEP;

        if servo.integrate(if k == 0 { 0.0 } else { travel }) {
            servo.command(controller.commanded_mode, safe, fire);
        }

        loop {
            let capture = next_capture as f64 * period;
            if capture > t + 1e-12 || capture > scenario.duration + 1e-9 {
                break;
            }
            let frame = sample_frame(&scenario.snapshot(capture), &config.profile, policy, &mut rng).unwrap();
            in_flight.push((frame.available_time, 1, ControllerEvent::FrameArrived(frame)));
            next_capture += 1;
        }
        while let Some(action) = operator.next_if(|a| a.time <= t) {
            let event = match action.command {
                OperatorCommand::Arm => ControllerEvent::OperatorArm { at: action.time },
                OperatorCommand::Disarm => ControllerEvent::OperatorDisarm { at: action.time },
            };
            in_flight.push((action.time, 0, event));
        }

        in_flight.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let due = in_flight.partition_point(|(at, _, _)| *at <= t);
        for (_, _, event) in in_flight.drain(..due) {
            if let Some(mode) = controller.apply(&event, policy).unwrap() {
                servo.command(mode, safe, fire);
            }
        }

        samples.push(servo.mode(safe, fire));
    }

    let mut fire_intervals = Vec::new();
    let mut start = None;
    for (k, mode) in samples.iter().enumerate() {
        let t = k as f64 * DENSE_STEP;
        match (*mode == DenseMode::Fire, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                fire_intervals.push(Interval::new(s, t));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        fire_intervals.push(Interval::new(s, scenario.duration));
    }
    DenseRun { samples, fire_intervals }
}

/// Random lane scenario with well-separated ground-truth changes, plus a
/// randomized perfect-detector config.
pub fn random_case(seed: u64) -> (Scenario, SimConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duration = rng.gen_range(3.0..8.0);

    let mut target_intervals = Vec::new();
    let mut t = rng.gen_range(0.0..0.5);
    while t < duration - 0.8 {
        let end = (t + rng.gen_range(0.8..3.0_f64)).min(duration);
        target_intervals.push(Interval::new(t, end));
        t = end + rng.gen_range(0.5..1.5);
    }

    let mut person_intervals = Vec::new();
    let mut t = rng.gen_range(0.3..1.5);
    while t < duration - 0.5 {
        let end = (t + rng.gen_range(0.5..1.5_f64)).min(duration);
        person_intervals.push(Interval::new(t, end));
        t = end + rng.gen_range(0.5..2.0);
    }

    let shot_script = {
        let mut times: Vec<f64> = (0..rng.gen_range(0..6)).map(|_| rng.gen_range(0.0..duration)).collect();
        times.sort_by(f64::total_cmp);
        times.into_iter().map(|time| ScriptedShot { time, hit: rng.gen_bool(0.5) }).collect()
    };

    let scenario = Scenario {
        schema_version: SCHEMA_VERSION,
        name: format!("random-{seed}"),
        duration,
        target_intervals,
        person_intervals,
        operator_commands: Vec::new(),
        shot_script,
    };

    let fps = [10.0, 11.0, 14.0, 15.0, 16.0, 18.0, 20.0, 25.0, 27.0, 36.0, 39.0, 64.0][rng.gen_range(0..12)];
    let profile = DetectorProfile {
        fps,
        camera_latency: rng.gen_range(0.0..0.2),
        ..DetectorProfile::reference()
    };
    let mut config = SimConfig::for_profile(profile).with_seed(rng.gen());
    config.policy = DecisionPolicy {
        confirm_frames: rng.gen_range(1..=3),
        ..config.policy
    };
    config.servo.fire_angle = rng.gen_range(10.0..90.0);
    (scenario, config)
}
