//! Command line and HTTP front end for the `catbn` engine.

pub mod cli;
pub mod config;
pub mod server;
