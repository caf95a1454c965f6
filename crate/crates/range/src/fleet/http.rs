//! Console API over HTTP.
//!
//! | method | path                          | body                  |
//! |--------|-------------------------------|-----------------------|
//! | GET    | /api/snapshot                 |                       |
//! | GET    | /api/shooters/{id}            |                       |
//! | POST   | /api/weapons/{id}/arm         |                       |
//! | POST   | /api/weapons/{id}/disarm      |                       |
//! | POST   | /api/disarm-all               |                       |
//! | GET    | /api/events                   | server-sent events    |
//! | POST   | /api/lanes/{id}/intrusion     | `{"duration": 2.0}`   |
//! | GET    | /api/metrics                  |                       |

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast::error::RecvError;

use super::embedded::EmbeddedRange;
use super::protocol::Body;
use super::service::FleetHandle;
use crate::error::RangeError;

#[derive(Clone)]
pub struct ApiState {
    pub fleet: FleetHandle,
    pub range: Option<Arc<EmbeddedRange>>,
    /// How often the event stream repeats a full snapshot, so clients see
    /// staleness change without any new traffic.
    pub snapshot_interval: Duration,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CommandAccepted {
    pub operator_seq: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IntrusionRequest {
    pub duration: f64,
}

#[derive(Debug, Serialize)]
struct ApiError {
    error: String,
}

fn error(status: StatusCode, message: impl ToString) -> Response {
    (status, Json(ApiError { error: message.to_string() })).into_response()
}

fn internal(e: RangeError) -> Response {
    error(StatusCode::INTERNAL_SERVER_ERROR, e)
}

pub fn router(state: ApiState) -> Router {
    Router::new()
        .route("/api/snapshot", get(snapshot))
        .route("/api/shooters/{id}", get(shooter))
        .route("/api/weapons/{id}/arm", post(arm))
        .route("/api/weapons/{id}/disarm", post(disarm))
        .route("/api/disarm-all", post(disarm_all))
        .route("/api/events", get(events))
        .route("/api/lanes/{id}/intrusion", post(intrusion))
        .route("/api/metrics", get(metrics))
        .with_state(state)
}

async fn snapshot(State(api): State<ApiState>) -> Response {
    match api.fleet.snapshot().await {
        Ok(s) => Json(s).into_response(),
        Err(e) => internal(e),
    }
}

async fn shooter(State(api): State<ApiState>, Path(id): Path<String>) -> Response {
    match api.fleet.shooter_stats(&id).await {
        Ok(s) => Json(s).into_response(),
        Err(e) => internal(e),
    }
}

async fn operator(api: &ApiState, body: Body) -> Response {
    match api.fleet.operator(body).await {
        Ok(Ok(seq)) => Json(CommandAccepted { operator_seq: seq }).into_response(),
        Ok(Err(reason)) if reason.starts_with("unknown weapon") => error(StatusCode::NOT_FOUND, reason),
        Ok(Err(reason)) => error(StatusCode::CONFLICT, reason),
        Err(e) => internal(e),
    }
}

async fn arm(State(api): State<ApiState>, Path(id): Path<String>) -> Response {
    operator(&api, Body::Arm { weapon_id: id }).await
}

async fn disarm(State(api): State<ApiState>, Path(id): Path<String>) -> Response {
    operator(&api, Body::Disarm { weapon_id: id }).await
}

async fn disarm_all(State(api): State<ApiState>) -> Response {
    operator(&api, Body::DisarmAll {}).await
}

async fn intrusion(State(api): State<ApiState>, Path(id): Path<String>, Json(req): Json<IntrusionRequest>) -> Response {
    let Some(range) = &api.range else {
        return error(StatusCode::NOT_FOUND, "no embedded lanes are running");
    };
    if !range.weapon_ids().contains(&id) {
        return error(StatusCode::NOT_FOUND, format!("no lane {id}"));
    }
    match range.inject_intrusion(&id, req.duration).await {
        Ok(interval) => Json(interval).into_response(),
        Err(e @ (RangeError::Sim(_) | RangeError::Invalid(_))) => error(StatusCode::UNPROCESSABLE_ENTITY, e),
        Err(e) => internal(e),
    }
}

async fn metrics(State(api): State<ApiState>) -> Response {
    match &api.range {
        Some(range) => Json(range.all_metrics().await).into_response(),
        None => Json(Vec::<()>::new()).into_response(),
    }
}

/// Streams `snapshot` events on connect and periodically, and an `update`
/// event after every journaled input.
async fn events(State(api): State<ApiState>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let updates = api.fleet.subscribe();
    let mut ticker = tokio::time::interval(api.snapshot_interval);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    let stream = stream::unfold((api.fleet, updates, ticker), |(fleet, mut updates, mut ticker)| async move {
        loop {
            tokio::select! {
                _ = ticker.tick() => {
                    let snapshot = fleet.snapshot().await.ok()?;
                    let event = Event::default().event("snapshot").json_data(snapshot).ok()?;
                    return Some((Ok(event), (fleet, updates, ticker)));
                }
                update = updates.recv() => match update {
                    Ok(update) => {
                        let event = Event::default().event("update").json_data(update).ok()?;
                        return Some((Ok(event), (fleet, updates, ticker)));
                    }
                    // A slow client missed updates; the next snapshot catches it up.
                    Err(RecvError::Lagged(_)) => ticker.reset_immediately(),
                    Err(RecvError::Closed) => return None,
                },
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}
