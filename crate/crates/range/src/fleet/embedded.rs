//! Simulated lanes running inside the server process.
//!
//! Each lane owns a [`Simulation`], advances it against the wall clock at a
//! configurable speed, and speaks the weapon protocol to the fleet actor
//! over an in-process connection. ARM and DISARM from the server become
//! operator events in the simulation. A lane acknowledges DISARM only once
//! its servo has come to rest in Safe.

use std::collections::BTreeMap;
use std::time::Duration;

use interlock_core::actuator::WeaponMode;
use interlock_core::sim::{
    derive_seed, exposure_by_person, reaction_stats, EventLog, Interval, LogEvent, OperatorCommand, Scenario, ScriptedShot,
    SimConfig, Simulation, SCHEMA_VERSION,
};
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio::time::Instant;

use super::protocol::{Body, ConnId, WireMessage, PROTOCOL_VERSION};
use super::service::FleetHandle;
use crate::error::{RangeError, Result};

#[derive(Debug, Clone)]
pub struct LaneSpec {
    pub weapon_id: String,
    pub shooter: String,
    pub scenario: Scenario,
    pub config: SimConfig,
}

#[derive(Debug, Clone)]
pub struct RangeOptions {
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
    pub tick: Duration,
    pub heartbeat: Duration,
}

impl Default for RangeOptions {
    fn default() -> Self {
        Self { speed: 1.0, tick: Duration::from_millis(10), heartbeat: Duration::from_secs(1) }
    }
}

/// A lane scenario for live demos: the target is up for the whole run, no
/// one is downrange unless injected, and the shooter fires every two
/// seconds.
pub fn demo_lane_scenario(duration: f64) -> Scenario {
    Scenario {
        schema_version: SCHEMA_VERSION,
        name: "live-lane".into(),
        duration,
        target_intervals: vec![Interval::new(0.0, duration)],
        person_intervals: Vec::new(),
        operator_commands: Vec::new(),
        shot_script: (1..)
            .map(|k| 2.0 * k as f64)
            .take_while(|t| *t < duration)
            .enumerate()
            .map(|(i, time)| ScriptedShot { time, hit: i % 3 != 2 })
            .collect(),
    }
}

/// A mode the lane put on the wire, with the run it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedMode {
    pub run: usize,
    pub sim_time: f64,
    pub mode: WeaponMode,
    /// The lane had acknowledged a DISARM and not yet received an ARM.
    pub latched: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaneRun {
    pub index: usize,
    pub seed: u64,
    pub log: EventLog,
    /// False for the run cut short when the lane stopped.
    pub complete: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaneOutcome {
    pub weapon_id: String,
    pub runs: Vec<LaneRun>,
    pub reported: Vec<ReportedMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneMetrics {
    pub weapon_id: String,
    pub run: usize,
    pub sim_time: f64,
    pub weapon_mode: WeaponMode,
    pub buzzer: bool,
    pub latched: bool,
    pub person_intervals: Vec<Interval>,
    pub exposure_per_person: Vec<f64>,
    /// `None` while the weapon has not yet reached Safe after an entry.
    pub reaction_latencies: Vec<Option<f64>>,
}

enum LaneRequest {
    Intrusion { duration: f64, reply: oneshot::Sender<Result<Interval>> },
    Metrics { reply: oneshot::Sender<Result<LaneMetrics>> },
    Kill,
    Stop,
}

struct Lane {
    spec: LaneSpec,
    options: RangeOptions,
    fleet: FleetHandle,
    conn: ConnId,
    seq: u64,
    sim: Simulation,
    run: usize,
    cursor: usize,
    wall_origin: Instant,
    sim_origin: f64,
    latched: bool,
    runs: Vec<LaneRun>,
    reported: Vec<ReportedMode>,
    last_sent: Instant,
}

impl Lane {
    fn config_for(&self, run: usize) -> SimConfig {
        self.spec.config.clone().with_seed(derive_seed(self.spec.config.seed, run as u64))
    }

    async fn send(&mut self, body: Body) -> Result<()> {
        self.seq += 1;
        self.last_sent = Instant::now();
        let line = WireMessage::new(self.seq, body).to_line();
        self.fleet.send_line(self.conn, line.trim_end().to_owned()).await
    }

    async fn report(&mut self, sim_time: f64, mode: WeaponMode) -> Result<()> {
        self.reported.push(ReportedMode { run: self.run, sim_time, mode, latched: self.latched });
        let body = Body::StateReport {
            weapon_id: self.spec.weapon_id.clone(),
            mode,
            buzzer: self.sim.buzzer(),
            sim_time: Some(sim_time),
        };
        self.send(body).await
    }

    /// Forwards mode changes and shots logged since the last call.
    async fn flush_log(&mut self) -> Result<()> {
        let fresh: Vec<(f64, LogEvent)> =
            self.sim.log().records()[self.cursor..].iter().map(|r| (r.time, r.event.clone())).collect();
        self.cursor = self.sim.log().len();
        for (time, event) in fresh {
            match event {
                LogEvent::WeaponModeChanged { to, .. } => self.report(time, to).await?,
                LogEvent::ShotFired { hit } => {
                    let body = Body::ShotEvent {
                        weapon_id: self.spec.weapon_id.clone(),
                        shooter: self.spec.shooter.clone(),
                        hit,
                        sim_time: Some(time),
                    };
                    self.send(body).await?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Closes the finished run and starts the next one, carrying the
    /// operator latch across.
    async fn roll_over(&mut self) -> Result<()> {
        self.sim.close()?;
        self.flush_log().await?;
        let seed = self.sim.config().seed;
        let log = self.sim.log().clone();
        self.runs.push(LaneRun { index: self.run, seed, log, complete: true });

        self.run += 1;
        self.sim = Simulation::new(self.spec.scenario.clone(), self.config_for(self.run))?;
        if self.latched {
            self.sim.inject_operator(OperatorCommand::Disarm)?;
        }
        self.cursor = self.sim.log().len();
        self.wall_origin = Instant::now();
        self.sim_origin = 0.0;
        let mode = self.sim.weapon_mode();
        self.report(0.0, mode).await
    }

    async fn advance(&mut self) -> Result<()> {
        let target = self.sim_origin + self.wall_origin.elapsed().as_secs_f64() * self.options.speed;
        self.sim.run_until(target)?;
        self.flush_log().await?;
        if self.sim.now() >= self.sim.scenario().duration {
            self.roll_over().await?;
        }
        Ok(())
    }

    /// Runs the simulation forward until the servo is idle, rolling over
    /// if the run ends first.
    async fn settle(&mut self) -> Result<()> {
        if let Some(dt) = self.sim.servo().time_to_target(&self.sim.config().servo) {
            let until = self.sim.now() + dt;
            self.sim.run_until(until)?;
            self.flush_log().await?;
            if !self.sim.servo().is_idle() {
                self.roll_over().await?;
            }
            // Keep the wall mapping continuous after the jump.
            self.sim_origin = self.sim.now();
            self.wall_origin = Instant::now();
        }
        Ok(())
    }

    async fn on_server(&mut self, msg: WireMessage) -> Result<()> {
        let command = match msg.body {
            Body::Arm { .. } => OperatorCommand::Arm,
            Body::Disarm { .. } => OperatorCommand::Disarm,
            _ => return Ok(()),
        };
        self.advance().await?;
        self.sim.inject_operator(command)?;
        self.flush_log().await?;
        if command == OperatorCommand::Disarm {
            self.settle().await?;
            if self.sim.weapon_mode() != WeaponMode::Safe {
                return Err(RangeError::Internal(format!("{} did not settle Safe", self.spec.weapon_id)));
            }
            self.latched = true;
            let now = self.sim.now();
            self.report(now, WeaponMode::Safe).await?;
        } else {
            self.latched = false;
        }
        self.send(Body::Ack { ack_seq: msg.seq }).await
    }

    fn metrics(&self) -> Result<LaneMetrics> {
        let now = self.sim.now();
        let mut log = self.sim.log().clone();
        log.push(now, LogEvent::RunEnd { weapon_mode: self.sim.weapon_mode() });
        let mut scenario = self.sim.scenario().clone();
        scenario.person_intervals.retain(|p| p.start <= now);
        Ok(LaneMetrics {
            weapon_id: self.spec.weapon_id.clone(),
            run: self.run,
            sim_time: now,
            weapon_mode: self.sim.weapon_mode(),
            buzzer: self.sim.buzzer(),
            latched: self.latched,
            exposure_per_person: exposure_by_person(&log, &scenario)?,
            reaction_latencies: reaction_stats(&log, &scenario)?.per_event,
            person_intervals: scenario.person_intervals,
        })
    }

    fn into_outcome(mut self) -> LaneOutcome {
        let seed = self.sim.config().seed;
        self.runs.push(LaneRun { index: self.run, seed, log: self.sim.log().clone(), complete: false });
        LaneOutcome { weapon_id: self.spec.weapon_id, runs: self.runs, reported: self.reported }
    }

    async fn run(mut self, mut control: mpsc::Receiver<LaneRequest>, mut inbox: mpsc::UnboundedReceiver<WireMessage>) -> Result<LaneOutcome> {
        let hello = Body::Hello {
            weapon_id: self.spec.weapon_id.clone(),
            protocol_version: PROTOCOL_VERSION,
            shooter: Some(self.spec.shooter.clone()),
        };
        self.send(hello).await?;
        let mode = self.sim.weapon_mode();
        self.report(0.0, mode).await?;

        let mut ticker = tokio::time::interval(self.options.tick);
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        loop {
            tokio::select! {
                biased;
                request = control.recv() => match request {
                    Some(LaneRequest::Intrusion { duration, reply }) => {
                        self.advance().await?;
                        let _ = reply.send(self.sim.inject_person(duration).map_err(Into::into));
                    }
                    Some(LaneRequest::Metrics { reply }) => {
                        let _ = reply.send(self.metrics());
                    }
                    Some(LaneRequest::Kill) => return Ok(self.into_outcome()),
                    Some(LaneRequest::Stop) | None => {
                        self.fleet.disconnect(self.conn).await;
                        return Ok(self.into_outcome());
                    }
                },
                msg = inbox.recv() => match msg {
                    Some(msg) => self.on_server(msg).await?,
                    None => return Ok(self.into_outcome()),
                },
                _ = ticker.tick() => {
                    self.advance().await?;
                    if self.last_sent.elapsed() >= self.options.heartbeat {
                        let (now, mode) = (self.sim.now(), self.sim.weapon_mode());
                        self.report(now, mode).await?;
                    }
                }
            }
        }
    }
}

struct LaneHandle {
    control: mpsc::Sender<LaneRequest>,
    task: JoinHandle<Result<LaneOutcome>>,
}

/// A set of running simulated lanes.
pub struct EmbeddedRange {
    lanes: BTreeMap<String, LaneHandle>,
}

/// Starts one in-process weapon per lane spec. Weapon ids must be unique.
pub async fn run_embedded_range(fleet: &FleetHandle, lanes: Vec<LaneSpec>, options: RangeOptions) -> Result<EmbeddedRange> {
    let mut seen = std::collections::BTreeSet::new();
    for spec in &lanes {
        if spec.weapon_id.trim().is_empty() {
            return Err(RangeError::Invalid("weapon ids must be non-empty".into()));
        }
        if !seen.insert(spec.weapon_id.clone()) {
            return Err(RangeError::Invalid(format!("duplicate weapon id {}", spec.weapon_id)));
        }
        spec.scenario.validate()?;
        spec.config.validate()?;
    }
    if !(options.speed.is_finite() && options.speed > 0.0) {
        return Err(RangeError::Invalid("speed must be positive".into()));
    }

    let mut handles = BTreeMap::new();
    for spec in lanes {
        let (conn, inbox) = fleet.connect().await?;
        let config = spec.config.clone().with_seed(derive_seed(spec.config.seed, 0));
        let sim = Simulation::new(spec.scenario.clone(), config)?;
        let cursor = sim.log().len();
        let lane = Lane {
            options: options.clone(),
            fleet: fleet.clone(),
            conn,
            seq: 0,
            sim,
            run: 0,
            cursor,
            wall_origin: Instant::now(),
            sim_origin: 0.0,
            latched: false,
            runs: Vec::new(),
            reported: Vec::new(),
            last_sent: Instant::now(),
            spec,
        };
        let id = lane.spec.weapon_id.clone();
        let (control, control_rx) = mpsc::channel(16);
        let task = tokio::spawn(lane.run(control_rx, inbox));
        handles.insert(id, LaneHandle { control, task });
    }
    Ok(EmbeddedRange { lanes: handles })
}

impl EmbeddedRange {
    pub fn weapon_ids(&self) -> Vec<String> {
        self.lanes.keys().cloned().collect()
    }

    fn lane(&self, id: &str) -> Result<&LaneHandle> {
        self.lanes.get(id).ok_or_else(|| RangeError::Invalid(format!("no lane {id}")))
    }

    async fn ask<T>(&self, id: &str, make: impl FnOnce(oneshot::Sender<Result<T>>) -> LaneRequest) -> Result<T> {
        let (reply, rx) = oneshot::channel();
        let gone = || RangeError::Internal(format!("lane {id} has stopped"));
        self.lane(id)?.control.send(make(reply)).await.map_err(|_| gone())?;
        rx.await.map_err(|_| gone())?
    }

    /// Puts a person downrange on lane `id` for `duration` simulated seconds.
    pub async fn inject_intrusion(&self, id: &str, duration: f64) -> Result<Interval> {
        self.ask(id, |reply| LaneRequest::Intrusion { duration, reply }).await
    }

    pub async fn metrics(&self, id: &str) -> Result<LaneMetrics> {
        self.ask(id, |reply| LaneRequest::Metrics { reply }).await
    }

    pub async fn all_metrics(&self) -> Vec<LaneMetrics> {
        let mut out = Vec::new();
        for id in self.lanes.keys() {
            if let Ok(m) = self.metrics(id).await {
                out.push(m);
            }
        }
        out
    }

    /// Drops lane `id` off the network without a goodbye, as a crashed
    /// weapon would. The server notices only through silence.
    pub async fn kill(&mut self, id: &str) -> Result<LaneOutcome> {
        let lane = self.lanes.remove(id).ok_or_else(|| RangeError::Invalid(format!("no lane {id}")))?;
        let _ = lane.control.send(LaneRequest::Kill).await;
        lane.task.await.map_err(|e| RangeError::Internal(e.to_string()))?
    }

    /// Stops every lane and returns what each one logged and reported.
    pub async fn stop(self) -> Result<Vec<LaneOutcome>> {
        let mut outcomes = Vec::new();
        for (_, lane) in self.lanes {
            let _ = lane.control.send(LaneRequest::Stop).await;
            outcomes.push(lane.task.await.map_err(|e| RangeError::Internal(e.to_string()))??);
        }
        Ok(outcomes)
    }
}
