//! Host-side companion to `interlock-core`: file formats, the fleet
//! service with its embedded simulated range, and the `interlock` CLI.

pub mod cli;
pub mod error;
pub mod fleet;
pub mod formats;

pub use error::{RangeError, Result};
