//! Orchestration for the hometwin platform: configuration, the subcommands
//! and the HTTP/WebSocket gateway.

pub mod commands;
pub mod config;
pub mod gateway;

pub use commands::{Platform, Uc1Stack};
pub use config::Config;
