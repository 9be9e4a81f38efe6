//! HTTP API, operator CLI and synthetic source simulator for the screening
//! pipeline.

pub mod api;
pub mod cli;
pub mod config;
pub mod services;
pub mod simulate;
pub mod verify;

pub use config::Config;
pub use services::Services;
