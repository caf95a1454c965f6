//! Range-control server: weapons register and stream state over a line
//! protocol, the range master arms and disarms them, and shot records
//! accumulate into shooter statistics.

pub mod embedded;
pub mod http;
pub mod journal;
pub mod protocol;
pub mod service;
pub mod state;

pub use embedded::{demo_lane_scenario, run_embedded_range, EmbeddedRange, LaneMetrics, LaneOutcome, LaneSpec, RangeOptions};
pub use journal::{read_journal, replay, Journal, JournalRecord};
pub use protocol::{parse_line, Body, ConnId, WireMessage, OPERATOR, PROTOCOL_VERSION};
pub use service::{serve_weapons, start, wall_clock, FleetConfig, FleetEvent, FleetHandle};
pub use state::{
    handle_message, Command, FleetInput, FleetSnapshot, FleetState, ScoreReport, ShotRecord, WeaponView,
    DEFAULT_LIVENESS_WINDOW,
};
