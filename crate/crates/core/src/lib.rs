//! Camera-gated safety interlock for range weapons.
//!
//! The crate is `no_std` with `alloc`. It holds the Safe/Fire decision
//! kernel ([`interlock`]), the safety-pin servo model ([`actuator`]), the
//! detector model and benchmark registry ([`perception`]) and an
//! event-driven lane simulator with its risk metrics ([`sim`]).

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod actuator;
mod error;
pub mod interlock;
pub mod perception;
pub mod sim;

pub use crate::error::{ActuatorError, InterlockError, PerceptionError, SimError};
