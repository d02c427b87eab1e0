//! The tether daemon: HTTP API, process lifecycle and command line.

pub mod api;
pub mod cli;
pub mod daemon;
