//! Command-line front end and live control service for `reef-core`.

pub mod cli;
pub mod output;
pub mod protocol;
pub mod server;
