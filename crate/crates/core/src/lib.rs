//! Bit-exact, cycle-accurate model of a stream-multiplier LSTM accelerator.

pub mod am;
pub mod app;
mod error;
pub mod fxp;
pub mod oracle;
pub mod perf;
pub mod sched;
pub mod units;

pub use error::{Error, Result};
