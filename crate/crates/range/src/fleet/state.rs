//! The fleet registry as a pure state machine.
//!
//! Every mutation goes through [`FleetState::apply`], which either rejects
//! the input and leaves the state untouched or accepts it and returns the
//! replies to send. Accepted inputs are exactly what the journal stores, so
//! folding a journal through `apply` rebuilds the state.

use std::collections::BTreeMap;

use interlock_core::actuator::WeaponMode;
use serde::{Deserialize, Serialize};

use super::protocol::{Body, ConnId, WireMessage, OPERATOR, PROTOCOL_VERSION};

pub type WeaponId = String;

/// Default silence after which a weapon is flagged stale, in seconds.
pub const DEFAULT_LIVENESS_WINDOW: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Command {
    Arm,
    Disarm,
}

impl Command {
    fn body(self, weapon_id: &str) -> Body {
        let weapon_id = weapon_id.to_owned();
        match self {
            Command::Arm => Body::Arm { weapon_id },
            Command::Disarm => Body::Disarm { weapon_id },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeaponEntry {
    /// Last reported mode; `None` until the first STATE_REPORT.
    pub mode: Option<WeaponMode>,
    pub buzzer: bool,
    pub operator_disarmed: bool,
    /// Wall-clock seconds of the last message from this weapon.
    pub last_seen: f64,
    pub connection: Option<ConnId>,
    pub shooter: Option<String>,
    /// Commands sent on the current connection and not yet acknowledged,
    /// oldest first.
    pub unacked: Vec<Command>,
    /// A command issued while the weapon was offline, sent on reconnect.
    pub undelivered: Option<Command>,
    /// Reports other than Safe received after the weapon confirmed a DISARM.
    pub latch_violations: u64,
    pub last_error: Option<String>,
}

impl WeaponEntry {
    /// The weapon has acknowledged the operator's disarm.
    pub fn disarm_confirmed(&self) -> bool {
        self.operator_disarmed && self.undelivered.is_none() && !self.unacked.contains(&Command::Disarm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionEntry {
    pub last_seq: Option<u64>,
    pub weapon: Option<WeaponId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub weapon: WeaponId,
    pub shooter: String,
    pub time: f64,
    pub hit: bool,
}

/// One accepted input, as stored in the journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum FleetInput {
    Connect,
    Disconnect,
    Message { message: WireMessage },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FleetState {
    pub weapons: BTreeMap<WeaponId, WeaponEntry>,
    pub shots: Vec<ShotRecord>,
    pub connections: BTreeMap<ConnId, ConnectionEntry>,
    pub operator_seq: Option<u64>,
}

pub type Outbound = (ConnId, Body);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub shooter: String,
    pub shots: u64,
    pub hits: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeaponView {
    pub weapon_id: WeaponId,
    pub mode: Option<WeaponMode>,
    pub buzzer: bool,
    pub operator_disarmed: bool,
    pub disarm_confirmed: bool,
    pub connected: bool,
    pub last_seen: f64,
    pub stale: bool,
    pub pending: Vec<Command>,
    pub shooter: Option<String>,
    pub latch_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSnapshot {
    pub time: f64,
    pub liveness_window: f64,
    pub weapons: Vec<WeaponView>,
    pub shots: usize,
}

impl FleetState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one input at wall-clock time `now`.
    pub fn apply(&mut self, conn: ConnId, input: &FleetInput, now: f64) -> Result<Vec<Outbound>, String> {
        match input {
            FleetInput::Connect => {
                if conn == OPERATOR || self.connections.contains_key(&conn) {
                    return Err(format!("connection {conn} already exists"));
                }
                self.connections.insert(conn, ConnectionEntry { last_seq: None, weapon: None });
                Ok(Vec::new())
            }
            FleetInput::Disconnect => {
                let entry = self.connections.remove(&conn).ok_or_else(|| format!("no connection {conn}"))?;
                if let Some(weapon) = entry.weapon.and_then(|id| self.weapons.get_mut(&id)) {
                    if weapon.connection == Some(conn) {
                        weapon.connection = None;
                    }
                }
                Ok(Vec::new())
            }
            FleetInput::Message { message } => self.apply_message(conn, message, now),
        }
    }

    /// Checks everything that can make `msg` invalid, then mutates.
    fn apply_message(&mut self, conn: ConnId, msg: &WireMessage, now: f64) -> Result<Vec<Outbound>, String> {
        let last_seq = if conn == OPERATOR {
            self.operator_seq
        } else {
            self.connections.get(&conn).ok_or_else(|| format!("no connection {conn}"))?.last_seq
        };
        if last_seq.is_some_and(|last| msg.seq <= last) {
            return Err(format!("seq {} does not follow {}", msg.seq, last_seq.unwrap_or_default()));
        }

        let from_operator = conn == OPERATOR;
        match (&msg.body, from_operator) {
            (Body::Arm { .. } | Body::Disarm { .. } | Body::DisarmAll {}, false) => {
                return Err(format!("{} is an operator command", msg.body.type_name()))
            }
            (Body::Hello { .. } | Body::StateReport { .. } | Body::ShotEvent { .. } | Body::Ack { .. }, true)
            | (Body::Error { .. }, true) => {
                return Err(format!("{} is not accepted from the operator", msg.body.type_name()))
            }
            _ => {}
        }

        let bound = self.connections.get(&conn).and_then(|c| c.weapon.clone());
        let require_bound = |weapon_id: &str| -> Result<(), String> {
            if bound.as_deref() == Some(weapon_id) {
                Ok(())
            } else {
                Err(format!("{weapon_id} is not registered on this connection"))
            }
        };

        // Validation.
        match &msg.body {
            Body::Hello { weapon_id, protocol_version, .. } => {
                if weapon_id.trim().is_empty() {
                    return Err("weapon_id must be non-empty".into());
                }
                if *protocol_version != PROTOCOL_VERSION {
                    return Err(format!("unsupported protocol_version {protocol_version}"));
                }
                if bound.as_ref().is_some_and(|b| b != weapon_id) {
                    return Err(format!("connection already speaks for {}", bound.unwrap_or_default()));
                }
            }
            Body::StateReport { weapon_id, sim_time, .. } => {
                require_bound(weapon_id)?;
                if sim_time.is_some_and(|t| !t.is_finite()) {
                    return Err("sim_time must be finite".into());
                }
            }
            Body::ShotEvent { weapon_id, shooter, .. } => {
                require_bound(weapon_id)?;
                if shooter.trim().is_empty() {
                    return Err("shooter must be non-empty".into());
                }
            }
            Body::Arm { weapon_id } | Body::Disarm { weapon_id } => {
                if !self.weapons.contains_key(weapon_id) {
                    return Err(format!("unknown weapon {weapon_id}"));
                }
            }
            Body::DisarmAll {} => {}
            Body::Ack { .. } => {
                let weapon = bound.as_ref().and_then(|id| self.weapons.get(id));
                if weapon.is_none_or(|w| w.unacked.is_empty()) {
                    return Err("ACK without an outstanding command".into());
                }
            }
            Body::Error { .. } => {
                if bound.is_none() {
                    return Err("ERROR from an unregistered connection".into());
                }
            }
        }

        // Mutation.
        if from_operator {
            self.operator_seq = Some(msg.seq);
        } else {
            self.connections.get_mut(&conn).expect("checked above").last_seq = Some(msg.seq);
            if let Some(weapon) = bound.as_ref().and_then(|id| self.weapons.get_mut(id)) {
                weapon.last_seen = weapon.last_seen.max(now);
            }
        }

        let ack = (conn, Body::Ack { ack_seq: msg.seq });
        let mut out = Vec::new();
        match &msg.body {
            Body::Hello { weapon_id, shooter, .. } => {
                out.push(ack);
                out.extend(self.register(conn, weapon_id, shooter.clone(), now));
            }
            Body::StateReport { weapon_id, mode, buzzer, .. } => {
                let weapon = self.weapons.get_mut(weapon_id).expect("bound weapons are registered");
                weapon.mode = Some(*mode);
                weapon.buzzer = *buzzer;
                if weapon.disarm_confirmed() && *mode != WeaponMode::Safe {
                    weapon.latch_violations += 1;
                }
                out.push(ack);
            }
            Body::ShotEvent { weapon_id, shooter, hit, .. } => {
                self.shots.push(ShotRecord { weapon: weapon_id.clone(), shooter: shooter.clone(), time: now, hit: *hit });
                out.push(ack);
            }
            Body::Arm { weapon_id } => {
                out.extend(self.command(weapon_id, Command::Arm));
                out.push(ack);
            }
            Body::Disarm { weapon_id } => {
                out.extend(self.command(weapon_id, Command::Disarm));
                out.push(ack);
            }
            Body::DisarmAll {} => {
                let ids: Vec<WeaponId> = self.weapons.keys().cloned().collect();
                for id in ids {
                    out.extend(self.command(&id, Command::Disarm));
                }
                out.push(ack);
            }
            Body::Ack { .. } => {
                let weapon = self.weapons.get_mut(bound.as_deref().expect("checked")).expect("checked");
                weapon.unacked.remove(0);
            }
            Body::Error { reason, .. } => {
                let weapon = self.weapons.get_mut(bound.as_deref().expect("checked")).expect("checked");
                weapon.last_error = Some(reason.clone());
            }
        }
        Ok(out)
    }

    fn register(&mut self, conn: ConnId, weapon_id: &str, shooter: Option<String>, now: f64) -> Vec<Outbound> {
        let weapon = self.weapons.entry(weapon_id.to_owned()).or_insert_with(|| WeaponEntry {
            mode: None,
            buzzer: false,
            operator_disarmed: false,
            last_seen: now,
            connection: None,
            shooter: None,
            unacked: Vec::new(),
            undelivered: None,
            latch_violations: 0,
            last_error: None,
        });
        weapon.last_seen = weapon.last_seen.max(now);
        if shooter.is_some() {
            weapon.shooter = shooter;
        }

        // A weapon speaking on a new connection replaces the old binding.
        if let Some(old) = weapon.connection.filter(|c| *c != conn) {
            if let Some(entry) = self.connections.get_mut(&old) {
                entry.weapon = None;
            }
        }
        weapon.connection = Some(conn);
        self.connections.get_mut(&conn).expect("registering connection exists").weapon = Some(weapon_id.to_owned());

        // The server owns the latch: whatever the weapon may have missed is
        // sent again.
        let missed_arm =
            weapon.undelivered == Some(Command::Arm) || weapon.unacked.last() == Some(&Command::Arm);
        weapon.undelivered = None;
        weapon.unacked.clear();
        let resend = if weapon.operator_disarmed {
            Some(Command::Disarm)
        } else if missed_arm {
            Some(Command::Arm)
        } else {
            None
        };
        match resend {
            Some(cmd) => {
                weapon.unacked.push(cmd);
                vec![(conn, cmd.body(weapon_id))]
            }
            None => Vec::new(),
        }
    }

    fn command(&mut self, weapon_id: &str, cmd: Command) -> Option<Outbound> {
        let weapon = self.weapons.get_mut(weapon_id)?;
        weapon.operator_disarmed = cmd == Command::Disarm;
        match weapon.connection {
            Some(conn) => {
                weapon.unacked.push(cmd);
                Some((conn, cmd.body(weapon_id)))
            }
            None => {
                weapon.undelivered = Some(cmd);
                None
            }
        }
    }

    pub fn shooter_stats(&self, shooter: &str) -> ScoreReport {
        let (shots, hits) = self
            .shots
            .iter()
            .filter(|s| s.shooter == shooter)
            .fold((0u64, 0u64), |(n, h), s| (n + 1, h + u64::from(s.hit)));
        ScoreReport {
            shooter: shooter.to_owned(),
            shots,
            hits,
            accuracy: if shots == 0 { 0.0 } else { hits as f64 / shots as f64 },
        }
    }

    pub fn snapshot(&self, now: f64, liveness_window: f64) -> FleetSnapshot {
        FleetSnapshot {
            time: now,
            liveness_window,
            weapons: self.weapons.iter().map(|(id, w)| view(id, w, now, liveness_window)).collect(),
            shots: self.shots.len(),
        }
    }

    pub fn weapon_view(&self, id: &str, now: f64, liveness_window: f64) -> Option<WeaponView> {
        self.weapons.get(id).map(|w| view(id, w, now, liveness_window))
    }
}

fn view(id: &str, w: &WeaponEntry, now: f64, liveness_window: f64) -> WeaponView {
    WeaponView {
        weapon_id: id.to_owned(),
        mode: w.mode,
        buzzer: w.buzzer,
        operator_disarmed: w.operator_disarmed,
        disarm_confirmed: w.disarm_confirmed(),
        connected: w.connection.is_some(),
        last_seen: w.last_seen,
        stale: now - w.last_seen > liveness_window,
        pending: w.unacked.iter().copied().chain(w.undelivered).collect(),
        shooter: w.shooter.clone(),
        latch_violations: w.latch_violations,
    }
}

/// Pure form of message handling: a rejected message yields the unchanged
/// state and an ERROR reply.
pub fn handle_message(state: &FleetState, conn: ConnId, msg: &WireMessage, now: f64) -> (FleetState, Vec<Outbound>) {
    let mut next = state.clone();
    match next.apply(conn, &FleetInput::Message { message: msg.clone() }, now) {
        Ok(out) => (next, out),
        Err(reason) => (state.clone(), vec![(conn, Body::Error { ack_seq: Some(msg.seq), reason })]),
    }
}
