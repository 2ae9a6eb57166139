//! HTTP facade and shared operations for the `mpe` binary.

pub mod api;
pub mod backends;
pub mod config;
pub mod error;
pub mod jobs;
pub mod service;

pub use api::router;
pub use config::ServiceConfig;
pub use error::{ApiError, ErrorCode};
pub use service::Service;

/// Reads a JSON array or newline-delimited JSON records.
pub fn read_records<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>, serde_json::Error> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed);
    }
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}
