//! The running fleet service: one actor task owns [`FleetState`] and the
//! journal; socket readers, the HTTP API and embedded lanes talk to it
//! through a [`FleetHandle`].

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot};

use super::journal::{replay, Journal, JournalRecord};
use super::protocol::{parse_line, Body, ConnId, WireMessage, OPERATOR};
use super::state::{FleetInput, FleetSnapshot, FleetState, ScoreReport, WeaponView, DEFAULT_LIVENESS_WINDOW};
use crate::error::{RangeError, Result};

#[derive(Debug, Clone)]
pub struct FleetConfig {
    pub liveness_window: f64,
    /// Journal file; `None` keeps the journal in memory.
    pub journal: Option<PathBuf>,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self { liveness_window: DEFAULT_LIVENESS_WINDOW, journal: None }
    }
}

/// Pushed to event-stream subscribers after every journaled input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetEvent {
    pub journal_index: u64,
    pub time: f64,
    pub conn: ConnId,
    /// `connect`, `disconnect`, or the wire message type.
    pub event: String,
    pub weapons: Vec<WeaponView>,
}

pub fn wall_clock() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

enum Request {
    Connect { outbox: mpsc::UnboundedSender<WireMessage>, reply: oneshot::Sender<ConnId> },
    Disconnect { conn: ConnId },
    Line { conn: ConnId, line: String },
    Operator { body: Body, reply: oneshot::Sender<Result<u64, String>> },
    Snapshot { reply: oneshot::Sender<FleetSnapshot> },
    Shooter { id: String, reply: oneshot::Sender<ScoreReport> },
    State { reply: oneshot::Sender<FleetState> },
    Journal { reply: oneshot::Sender<Vec<JournalRecord>> },
}

/// Cheap to clone; every clone talks to the same actor.
#[derive(Clone)]
pub struct FleetHandle {
    tx: mpsc::Sender<Request>,
    events: broadcast::Sender<FleetEvent>,
    liveness_window: f64,
}

const GONE: &str = "fleet service has stopped";

impl FleetHandle {
    async fn ask<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Request) -> Result<T> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(make(reply)).await.map_err(|_| RangeError::Internal(GONE.into()))?;
        rx.await.map_err(|_| RangeError::Internal(GONE.into()))
    }

    /// Opens a weapon connection; messages for it arrive on the returned
    /// receiver with server sequence numbers already stamped.
    pub async fn connect(&self) -> Result<(ConnId, mpsc::UnboundedReceiver<WireMessage>)> {
        let (outbox, inbox) = mpsc::unbounded_channel();
        let conn = self.ask(|reply| Request::Connect { outbox, reply }).await?;
        Ok((conn, inbox))
    }

    pub async fn disconnect(&self, conn: ConnId) {
        let _ = self.tx.send(Request::Disconnect { conn }).await;
    }

    /// Delivers one raw protocol line from a weapon connection.
    pub async fn send_line(&self, conn: ConnId, line: String) -> Result<()> {
        self.tx.send(Request::Line { conn, line }).await.map_err(|_| RangeError::Internal(GONE.into()))
    }

    /// Issues ARM, DISARM or DISARM_ALL as the range master. Returns the
    /// operator sequence number once the command is journaled.
    pub async fn operator(&self, body: Body) -> Result<Result<u64, String>> {
        self.ask(|reply| Request::Operator { body, reply }).await
    }

    pub async fn snapshot(&self) -> Result<FleetSnapshot> {
        self.ask(|reply| Request::Snapshot { reply }).await
    }

    pub async fn shooter_stats(&self, id: &str) -> Result<ScoreReport> {
        let id = id.to_owned();
        self.ask(|reply| Request::Shooter { id, reply }).await
    }

    pub async fn state(&self) -> Result<FleetState> {
        self.ask(|reply| Request::State { reply }).await
    }

    pub async fn journal(&self) -> Result<Vec<JournalRecord>> {
        self.ask(|reply| Request::Journal { reply }).await
    }

    pub fn subscribe(&self) -> broadcast::Receiver<FleetEvent> {
        self.events.subscribe()
    }

    pub fn liveness_window(&self) -> f64 {
        self.liveness_window
    }
}

struct Actor {
    state: FleetState,
    journal: Journal,
    outboxes: HashMap<ConnId, (mpsc::UnboundedSender<WireMessage>, u64)>,
    next_conn: ConnId,
    events: broadcast::Sender<FleetEvent>,
    liveness_window: f64,
}

/// Starts the actor. An existing journal is replayed first; connections it
/// left open are closed with journaled disconnects.
pub fn start(config: FleetConfig) -> Result<FleetHandle> {
    let mut journal = match &config.journal {
        Some(path) => Journal::open(path)?,
        None => Journal::in_memory(),
    };
    let state = replay(journal.records())?;
    let mut actor_state = state;
    let next_conn = journal.records().iter().map(|r| r.conn + 1).max().unwrap_or(1).max(1);
    let open: Vec<ConnId> = actor_state.connections.keys().copied().collect();
    for conn in open {
        let now = wall_clock();
        actor_state.apply(conn, &FleetInput::Disconnect, now).map_err(RangeError::Internal)?;
        journal.append(now, conn, FleetInput::Disconnect)?;
    }

    let (tx, rx) = mpsc::channel(1024);
    let (events, _) = broadcast::channel(1024);
    let actor = Actor {
        state: actor_state,
        journal,
        outboxes: HashMap::new(),
        next_conn,
        events: events.clone(),
        liveness_window: config.liveness_window,
    };
    tokio::spawn(actor.run(rx));
    Ok(FleetHandle { tx, events, liveness_window: config.liveness_window })
}

impl Actor {
    async fn run(mut self, mut rx: mpsc::Receiver<Request>) {
        while let Some(request) = rx.recv().await {
            if let Err(e) = self.handle(request) {
                // A journal that cannot be written means effects could go
                // unrecorded, so the service stops accepting anything.
                eprintln!("fleet service stopping: {e}");
                return;
            }
        }
    }

    fn handle(&mut self, request: Request) -> Result<()> {
        let now = wall_clock();
        match request {
            Request::Connect { outbox, reply } => {
                let conn = self.next_conn;
                self.next_conn += 1;
                self.commit(conn, FleetInput::Connect, now)?;
                self.outboxes.insert(conn, (outbox, 0));
                let _ = reply.send(conn);
            }
            Request::Disconnect { conn } => {
                if self.state.connections.contains_key(&conn) {
                    self.commit(conn, FleetInput::Disconnect, now)?;
                }
                self.outboxes.remove(&conn);
            }
            Request::Line { conn, line } => match parse_line(&line) {
                Ok(message) => {
                    if let Err(reason) = self.try_commit(conn, FleetInput::Message { message: message.clone() }, now)? {
                        self.send(conn, Body::Error { ack_seq: Some(message.seq), reason });
                    }
                }
                Err(failure) => self.send(conn, Body::Error { ack_seq: failure.seq, reason: failure.reason }),
            },
            Request::Operator { body, reply } => {
                let seq = self.state.operator_seq.map_or(1, |s| s + 1);
                let message = WireMessage::new(seq, body);
                let result = self.try_commit(OPERATOR, FleetInput::Message { message }, now)?;
                let _ = reply.send(result.map(|()| seq));
            }
            Request::Snapshot { reply } => {
                let _ = reply.send(self.state.snapshot(now, self.liveness_window));
            }
            Request::Shooter { id, reply } => {
                let _ = reply.send(self.state.shooter_stats(&id));
            }
            Request::State { reply } => {
                let _ = reply.send(self.state.clone());
            }
            Request::Journal { reply } => {
                let _ = reply.send(self.journal.records().to_vec());
            }
        }
        Ok(())
    }

    fn commit(&mut self, conn: ConnId, input: FleetInput, now: f64) -> Result<()> {
        self.try_commit(conn, input, now)?.map_err(RangeError::Internal)
    }

    /// Applies, journals, then sends replies. The outer error is fatal; the
    /// inner one is a rejection that changed nothing.
    fn try_commit(&mut self, conn: ConnId, input: FleetInput, now: f64) -> Result<Result<(), String>> {
        let event_name = match &input {
            FleetInput::Connect => "connect".to_owned(),
            FleetInput::Disconnect => "disconnect".to_owned(),
            FleetInput::Message { message } => message.body.type_name().to_owned(),
        };
        let touched: Vec<String> = match &input {
            FleetInput::Message { message: WireMessage { body: Body::DisarmAll {}, .. } } => {
                self.state.weapons.keys().cloned().collect()
            }
            FleetInput::Message { message } => match message.body.weapon_id() {
                Some(id) => vec![id.to_owned()],
                None => self.bound_weapon(conn).into_iter().collect(),
            },
            _ => self.bound_weapon(conn).into_iter().collect(),
        };
        let outbound = match self.state.apply(conn, &input, now) {
            Ok(out) => out,
            Err(reason) => return Ok(Err(reason)),
        };
        let index = self.journal.append(now, conn, input)?.index;

        for (to, body) in outbound {
            if to != OPERATOR {
                self.send(to, body);
            }
        }
        let weapons = touched
            .iter()
            .filter_map(|id| self.state.weapon_view(id, now, self.liveness_window))
            .collect();
        let _ = self.events.send(FleetEvent { journal_index: index, time: now, conn, event: event_name, weapons });
        Ok(Ok(()))
    }

    fn bound_weapon(&self, conn: ConnId) -> Option<String> {
        self.state
            .connections
            .get(&conn)
            .and_then(|c| c.weapon.clone())
            .or_else(|| self.state.weapons.iter().find(|(_, w)| w.connection == Some(conn)).map(|(id, _)| id.clone()))
    }

    fn send(&mut self, conn: ConnId, body: Body) {
        if let Some((outbox, seq)) = self.outboxes.get_mut(&conn) {
            *seq += 1;
            let _ = outbox.send(WireMessage::new(*seq, body));
        }
    }
}

/// Accepts weapon connections on `listener` until the task is dropped.
pub async fn serve_weapons(listener: TcpListener, fleet: FleetHandle) {
    loop {
        let Ok((socket, _)) = listener.accept().await else { continue };
        let fleet = fleet.clone();
        tokio::spawn(async move {
            let Ok((conn, mut inbox)) = fleet.connect().await else { return };
            let (read, mut write) = socket.into_split();
            let writer = tokio::spawn(async move {
                while let Some(msg) = inbox.recv().await {
                    if write.write_all(msg.to_line().as_bytes()).await.is_err() {
                        break;
                    }
                }
            });
            let mut lines = BufReader::new(read).lines();
            while let Ok(Some(line)) = lines.next_line().await {
                if line.trim().is_empty() {
                    continue;
                }
                if fleet.send_line(conn, line).await.is_err() {
                    break;
                }
            }
            fleet.disconnect(conn).await;
            writer.abort();
        });
    }
}
