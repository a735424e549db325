//! Link-level simulation and analysis of spatial modulation (SM) against
//! spatial multiplexing (SMX) over simulated and measured MIMO channels.

pub mod analysis;
pub mod channel;
pub mod detect;
pub mod error;
pub mod measurements;
pub mod modem;
pub mod rng;
pub mod sim;

pub use error::{Error, ErrorCategory, Result};
