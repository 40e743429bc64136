//! Command implementations and the HTTP session service behind the
//! `dptradeoff` binary.

pub mod commands;
pub mod server;
