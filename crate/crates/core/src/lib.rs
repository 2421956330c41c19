//! Stochastic linear-quadratic control of multi-agent fleets whose total
//! input must meet a prescribed requirement at some or all time steps.

pub mod bench;
pub mod commands;
pub mod config;
pub mod controller;
pub mod demo;
pub mod error;
pub mod model;
pub mod numkernel;
pub mod output;
pub mod oracle;
pub mod simulator;
pub mod verify;

pub use error::{Error, Result};
