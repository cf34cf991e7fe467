//! The posture monitoring service and its command-line tooling.

pub mod config;
pub mod service;

pub use config::ServiceConfig;
pub use service::{router, AppState};
