mod support;

use interlock_core::actuator::WeaponMode;
use interlock_core::interlock::Mode;
use interlock_core::perception::DetectorProfile;
use interlock_core::sim::{
    exposure_time, monte_carlo, reaction_stats, report_from_log, run, verify_controller_conformance, EventLog,
    Interval, LogEvent, OperatorAction, OperatorCommand, Scenario, SimConfig, SCHEMA_VERSION,
};
use interlock_core::SimError;
use support::{dense_replay, random_case, DENSE_STEP};

fn reference() -> SimConfig {
    SimConfig::default().with_seed(42)
}

#[test]
fn canonical_intrusion_reacts_in_budget() {
    let (report, log) = run(&Scenario::canonical_intrusion(), &reference()).unwrap();
    let latency = report.reaction_latencies[0].unwrap();
    assert!((latency - 0.27).abs() < 1e-9, "latency {latency}");
    assert!((report.aligned_latency_budget - 0.27).abs() < 1e-12);
    assert!((report.worst_case_latency_bound - 0.32).abs() < 1e-12);
    // Fire from entry until the Safe command (1.17 s) starts the pin moving.
    assert!((report.exposure_seconds - 0.17).abs() < 1e-9);
    verify_controller_conformance(&log).unwrap();
}

#[test]
fn canonical_timeline() {
    let (_, log) = run(&Scenario::canonical_intrusion(), &reference()).unwrap();
    let commands: Vec<_> = log.controller_commands().collect();
    // Armed by the second target frame (captured 0.05, available 0.22),
    // vetoed by the frame captured at 1.00, re-armed after the person leaves.
    assert_eq!(commands.len(), 3);
    assert!((commands[0].0 - 0.22).abs() < 1e-9 && commands[0].1 == Mode::Fire);
    assert!((commands[1].0 - 1.17).abs() < 1e-9 && commands[1].1 == Mode::Safe);
    assert!((commands[2].0 - 2.22).abs() < 1e-9 && commands[2].1 == Mode::Fire);
    let fire = log.fire_intervals().unwrap();
    assert_eq!(fire.len(), 2);
    assert!((fire[0].start - 0.32).abs() < 1e-9 && (fire[0].end - 1.17).abs() < 1e-9);
    assert!((fire[1].start - 2.32).abs() < 1e-9 && fire[1].end == 3.0);
}

#[test]
fn late_entry_waits_for_next_capture() {
    let (report, _) = run(&Scenario::late_intrusion(), &reference()).unwrap();
    let latency = report.reaction_latencies[0].unwrap();
    assert!(latency > 0.27 && latency <= 0.32 + 1e-9, "latency {latency}");
    // Dense 1 ms replay agrees to within two grid steps.
    let dense = dense_replay(&Scenario::late_intrusion(), &reference());
    let dense_latency = dense.reaction(1.0 + 1e-6).unwrap();
    assert!((dense_latency - latency).abs() <= 2.0 * DENSE_STEP, "{dense_latency} vs {latency}");
}

#[test]
fn empty_scenario_stays_safe() {
    let (report, log) = run(&Scenario::empty(3.0), &reference()).unwrap();
    assert_eq!(report.exposure_seconds, 0.0);
    assert_eq!(report.mode_transitions, 0);
    assert!(log.fire_intervals().unwrap().is_empty());
    assert!(log.controller_commands().next().is_none());
    assert!(report.frames_captured > 0);
}

#[test]
fn zero_latency_limit_has_no_exposure() {
    // Camera latency 0, a 1 MHz detector and a near-instant servo: the only
    // delay left is one microsecond of inference.
    let profile = DetectorProfile { fps: 1e6, camera_latency: 0.0, ..DetectorProfile::reference() };
    let mut config = SimConfig::for_profile(profile).with_seed(1);
    config.policy.confirm_frames = 1;
    config.servo.speed_s_per_60deg = 1e-12;
    let scenario = Scenario {
        schema_version: SCHEMA_VERSION,
        name: "zero-latency".into(),
        duration: 0.01,
        target_intervals: vec![Interval::new(0.0, 0.01)],
        person_intervals: vec![Interval::new(0.005, 0.0075)],
        operator_commands: vec![],
        shot_script: vec![],
    };
    let (report, _) = run(&scenario, &config).unwrap();
    assert!(report.exposure_seconds <= 1e-6 + 1e-9, "{}", report.exposure_seconds);
    assert!(report.reaction_latencies[0].unwrap() <= 1e-6 + 1e-9);
}

#[test]
fn same_seed_same_log() {
    let config = SimConfig {
        profile: DetectorProfile { miss_rate: 0.2, false_alarm_rate: 0.3, ..DetectorProfile::reference() },
        ..reference()
    };
    let a = run(&Scenario::canonical_intrusion(), &config).unwrap();
    let b = run(&Scenario::canonical_intrusion(), &config).unwrap();
    assert_eq!(a, b);
    let c = run(&Scenario::canonical_intrusion(), &config.clone().with_seed(43)).unwrap();
    assert_ne!(a.1, c.1);
}

fn log_with_fire(fire: &[(f64, f64)], end: f64, scenario: &Scenario) -> EventLog {
    let mut log = EventLog::new();
    log.push(
        0.0,
        LogEvent::RunStart { scenario: scenario.clone(), config: SimConfig::default(), weapon_mode: WeaponMode::Safe },
    );
    for &(start, stop) in fire {
        log.push(start, LogEvent::WeaponModeChanged { from: WeaponMode::Safe, to: WeaponMode::Fire });
        log.push(stop, LogEvent::WeaponModeChanged { from: WeaponMode::Fire, to: WeaponMode::Safe });
    }
    log.push(end, LogEvent::RunEnd { weapon_mode: WeaponMode::Safe });
    log
}

/// Brute-force measure of the intersection by summing overlaps pairwise.
fn intersection_oracle(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    a.iter()
        .flat_map(|x| b.iter().map(move |y| (x.1.min(y.1) - x.0.max(y.0)).max(0.0)))
        .sum()
}

#[test]
fn exposure_examples() {
    let mut scenario = Scenario::empty(10.0);
    scenario.person_intervals = vec![Interval::new(4.0, 6.0)];
    let log = log_with_fire(&[(2.0, 5.0)], 10.0, &scenario);
    let expected = intersection_oracle(&[(2.0, 5.0)], &[(4.0, 6.0)]);
    assert_eq!(expected, 1.0);
    assert_eq!(exposure_time(&log, &scenario).unwrap(), expected);

    let disjoint = log_with_fire(&[(0.5, 1.5)], 10.0, &scenario);
    assert_eq!(exposure_time(&disjoint, &scenario).unwrap(), 0.0);

    scenario.person_intervals = vec![Interval::new(0.0, 10.0)];
    let never = log_with_fire(&[], 10.0, &scenario);
    assert_eq!(exposure_time(&never, &scenario).unwrap(), 0.0);
}

#[test]
fn truncated_log_is_rejected() {
    let (_, log) = run(&Scenario::canonical_intrusion(), &reference()).unwrap();
    let mut records = log.records().to_vec();
    records.pop();
    let truncated = EventLog::from_records(records).unwrap();
    assert_eq!(exposure_time(&truncated, &Scenario::canonical_intrusion()), Err(SimError::TruncatedLog));
}

#[test]
fn reaction_zero_when_already_safe() {
    let mut scenario = Scenario::canonical_intrusion();
    scenario.target_intervals = vec![];
    let (_, log) = run(&scenario, &reference()).unwrap();
    let stats = reaction_stats(&log, &scenario).unwrap();
    assert_eq!(stats.per_event, vec![Some(0.0)]);
    assert_eq!(stats.mean, Some(0.0));
    assert_eq!(stats.max, Some(0.0));
}

#[test]
fn operator_disarm_latches_in_simulation() {
    let mut scenario = Scenario::canonical_intrusion();
    scenario.person_intervals = vec![];
    scenario.operator_commands = vec![
        OperatorAction { time: 0.5, command: OperatorCommand::Disarm },
        OperatorAction { time: 2.0, command: OperatorCommand::Arm },
    ];
    let (_, log) = run(&scenario, &reference()).unwrap();
    let fire = log.fire_intervals().unwrap();
    assert!(fire.iter().all(|f| f.end <= 0.5 + 1e-9 || f.start >= 2.0));
    assert!(fire.iter().any(|f| f.start >= 2.0));
    verify_controller_conformance(&log).unwrap();
}

#[test]
fn shots_only_fire_in_fire_mode() {
    let (report, log) = run(&Scenario::canonical_intrusion(), &reference()).unwrap();
    let timeline = log.mode_timeline().unwrap();
    for record in log.records() {
        if let LogEvent::ShotFired { .. } = record.event {
            let mode = timeline.iter().take_while(|(t, _)| *t <= record.time).last().unwrap().1;
            assert_eq!(mode, WeaponMode::Fire);
        }
    }
    // Shots at 0.1 (still Safe) and 1.5 (person present) are suppressed.
    assert_eq!(report.suppressed_shots, 2);
    assert_eq!(report.shots_fired, 3);
    assert_eq!(report.hits, 3);
}

#[test]
fn tampered_log_fails_conformance() {
    let (_, log) = run(&Scenario::canonical_intrusion(), &reference()).unwrap();
    let mut records = log.records().to_vec();
    let idx = records.iter().position(|r| matches!(r.event, LogEvent::ModeCommand { .. })).unwrap();
    records[idx].event = LogEvent::ModeCommand { mode: Mode::Safe };
    let tampered = EventLog::from_records(records).unwrap();
    assert!(verify_controller_conformance(&tampered).is_err());
}

#[test]
fn report_recomputes_from_log() {
    let (report, log) = run(&Scenario::canonical_intrusion(), &reference()).unwrap();
    assert_eq!(report_from_log(&log).unwrap(), report);
}

#[test]
fn log_structure_holds_for_random_runs() {
    for seed in 0..40 {
        let (scenario, config) = random_case(seed);
        let (_, log) = run(&scenario, &config).unwrap();
        log.check().unwrap();
        verify_controller_conformance(&log).unwrap();
    }
}

#[test]
fn exposure_matches_dense_replay() {
    for seed in 100..130 {
        let (scenario, config) = random_case(seed);
        let (report, _) = run(&scenario, &config).unwrap();
        let dense = dense_replay(&scenario, &config).exposure_by_person(&scenario);
        for (i, (a, b)) in report.exposure_per_person.iter().zip(&dense).enumerate() {
            assert!((a - b).abs() <= 2e-3, "seed {seed} person {i}: event {a} dense {b}");
        }
    }
}

/// The floor applies when the person is the only reason to disarm: the
/// weapon is not already Safe and the target stayed up for every frame that
/// could arrive before the floor elapses.
#[test]
fn latency_floor_holds() {
    let mut checked = 0;
    for seed in 200..300 {
        let (scenario, config) = random_case(seed);
        let (report, log) = run(&scenario, &config).unwrap();
        let timeline = log.mode_timeline().unwrap();
        for (person, latency) in scenario.person_intervals.iter().zip(&report.reaction_latencies) {
            let Some(latency) = *latency else { continue };
            let at_entry = timeline.iter().take_while(|(t, _)| *t <= person.start).last().unwrap().1;
            let window = Interval::new(person.start - report.latency_floor, person.start);
            let target_steady = scenario
                .target_intervals
                .iter()
                .any(|t| t.start <= window.start && window.end < t.end);
            if at_entry == WeaponMode::Safe || !target_steady {
                continue;
            }
            checked += 1;
            assert!(latency >= report.latency_floor - 1e-9, "seed {seed}: {latency} < floor");
            if at_entry == WeaponMode::Fire {
                assert!(latency >= report.aligned_latency_budget - 1e-9, "seed {seed}: {latency}");
            }
        }
    }
    assert!(checked > 20, "only {checked} entries exercised the floor");
}

#[test]
fn servo_reissue_recovers_discarded_fire() {
    // Very slow servo: the person leaves while the pin is still travelling
    // to Safe, so the next Fire command is discarded mid-motion.
    let mut config = reference();
    config.servo.speed_s_per_60deg = 1.5;
    let mut scenario = Scenario::canonical_intrusion();
    scenario.duration = 5.0;
    scenario.target_intervals = vec![Interval::new(0.0, 5.0)];
    scenario.person_intervals = vec![Interval::new(1.5, 1.6)];
    let (_, log) = run(&scenario, &config).unwrap();
    let discarded = log.records().iter().any(|r| matches!(r.event, LogEvent::CommandDiscarded { mode: Mode::Fire }));
    let reissued = log.records().iter().any(|r| matches!(r.event, LogEvent::Reissue { mode: Mode::Fire }));
    assert!(discarded && reissued);
    log.check().unwrap();
    // Safe at 2.67, Fire re-sent on arrival, pin back in Fire at 3.67.
    let last = *log.fire_intervals().unwrap().last().unwrap();
    assert!((last.start - 3.67).abs() < 1e-9 && last.end == 5.0, "{last:?}");
}

#[test]
fn monte_carlo_single_run_matches() {
    let scenario = Scenario::canonical_intrusion();
    let config = SimConfig {
        profile: DetectorProfile { miss_rate: 0.2, ..DetectorProfile::reference() },
        ..reference()
    };
    let agg = monte_carlo(&scenario, &config, 1).unwrap();
    let (single, _) = run(&scenario, &interlock_core::sim::run_config(&config, 0)).unwrap();
    assert_eq!(agg.runs, 1);
    assert_eq!(agg.exposure.mean, single.exposure_seconds);
    assert_eq!(agg.exposure.max, single.exposure_seconds);
    assert_eq!(agg.per_run[0].seed, single.seed);
    assert!(monte_carlo(&scenario, &config, 0).is_err());
}

#[test]
fn monte_carlo_without_noise_has_zero_variance() {
    let agg = monte_carlo(&Scenario::canonical_intrusion(), &reference(), 20).unwrap();
    assert_eq!(agg.exposure.std_dev, 0.0);
    assert_eq!(agg.reaction.std_dev, 0.0);
    assert!((agg.reaction.mean - 0.27).abs() < 1e-9);
}

/// Misses on the target keep the weapon Safe, so a noisy detector only adds
/// exposure when a person lingers downrange long enough for person misses to
/// dominate. Here someone stands in the lane for 30 s and a single clean
/// frame arms the weapon.
#[test]
fn missed_detections_raise_exposure_for_loitering_person() {
    let scenario = Scenario {
        schema_version: SCHEMA_VERSION,
        name: "loiter".into(),
        duration: 40.0,
        target_intervals: vec![Interval::new(0.0, 40.0)],
        person_intervals: vec![Interval::new(5.0, 35.0)],
        operator_commands: vec![],
        shot_script: vec![],
    };
    let mut config = reference();
    config.policy.confirm_frames = 1;
    let clean = monte_carlo(&scenario, &config, 500).unwrap();
    let noisy_config = SimConfig {
        profile: DetectorProfile { miss_rate: 0.3, ..DetectorProfile::reference() },
        ..config
    };
    let noisy = monte_carlo(&scenario, &noisy_config, 500).unwrap();
    assert!((clean.exposure.mean - 0.17).abs() < 1e-9);
    assert!(
        clean.exposure.mean <= noisy.exposure.mean,
        "clean {} noisy {}",
        clean.exposure.mean,
        noisy.exposure.mean
    );
}

#[test]
fn invalid_inputs_are_rejected() {
    let mut scenario = Scenario::canonical_intrusion();
    scenario.person_intervals = vec![Interval::new(2.0, 2.5), Interval::new(1.0, 1.5)];
    assert!(matches!(run(&scenario, &reference()), Err(SimError::InvalidScenario(_))));
    let dnr = SimConfig::for_profile(DetectorProfile::new("inception-v4", "raspberry-pi-3", None));
    assert!(run(&Scenario::canonical_intrusion(), &dnr).is_err());
}

#[test]
fn injected_intrusion_is_measured() {
    let mut sim = interlock_core::sim::Simulation::new(Scenario::canonical_intrusion(), reference()).unwrap();
    sim.run_until(2.5).unwrap();
    assert_eq!(sim.weapon_mode(), WeaponMode::Fire);
    assert!(sim.buzzer());
    let interval = sim.inject_person(0.4).unwrap();
    assert_eq!(interval.start, 2.5);
    assert!(sim.inject_person(0.0).is_err());
    let (report, log) = sim.finish().unwrap();
    let latency = report.reaction_latencies[1].unwrap();
    assert!((0.27 - 1e-9..=0.32 + 1e-9).contains(&latency), "{latency}");
    assert_eq!(log.scenario().unwrap().person_intervals.len(), 2);
    assert_eq!(report_from_log(&log).unwrap(), report);
}
