//! Library surface of the experiment runner, exposed so the binary stays a
//! thin argument-parsing shell and integration tests can drive the commands
//! directly.

pub mod config;
pub mod experiments;
pub mod output;
