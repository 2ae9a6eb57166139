use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use mpe_core::predict::adapter::AdapterBackend;
use mpe_core::predict::mock::{MockBackend, MockScript};
use mpe_core::predict::reference::{ReferenceBackend, ReferenceConfig};
use mpe_core::predict::PredictorSuite;
use parking_lot::Mutex;

use crate::error::ApiError;

/// Builds a suite from a backend name:
/// `reference`, `mock:<script.json>`, `adapter:<command args..>` or `adapter:unix:<socket>`.
pub fn build_backend(name: &str) -> Result<PredictorSuite, ApiError> {
    let name = name.trim();
    if name == "reference" {
        return Ok(PredictorSuite::from_backend(Arc::new(ReferenceBackend::new(ReferenceConfig::default()))));
    }
    if let Some(path) = name.strip_prefix("mock:") {
        let script = MockScript::load(Path::new(path)).map_err(|e| ApiError::invalid(format!("backend {name:?}: {e}")))?;
        return Ok(PredictorSuite::from_backend(Arc::new(MockBackend::new(script))));
    }
    if let Some(socket) = name.strip_prefix("adapter:unix:") {
        let b = AdapterBackend::connect_unix(Path::new(socket)).map_err(|e| ApiError::backend(e.to_string()))?;
        return Ok(PredictorSuite::from_backend(Arc::new(b)));
    }
    if let Some(cmd) = name.strip_prefix("adapter:") {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts.next().ok_or_else(|| ApiError::invalid("adapter backend needs a command"))?;
        let args: Vec<String> = parts.collect();
        let b = AdapterBackend::spawn(&program, &args).map_err(|e| ApiError::backend(e.to_string()))?;
        return Ok(PredictorSuite::from_backend(Arc::new(b)));
    }
    Err(ApiError::invalid(format!("unknown backend {name:?}")))
}

/// Caches one suite per backend name.
pub struct BackendRegistry {
    default: String,
    cache: Mutex<HashMap<String, PredictorSuite>>,
}

impl BackendRegistry {
    pub fn new(default: impl Into<String>) -> Self {
        Self { default: default.into(), cache: Mutex::new(HashMap::new()) }
    }

    pub fn default_name(&self) -> &str {
        &self.default
    }

    pub fn insert(&self, name: impl Into<String>, suite: PredictorSuite) {
        self.cache.lock().insert(name.into(), suite);
    }

    pub fn resolve(&self, name: Option<&str>) -> Result<PredictorSuite, ApiError> {
        let name = name.filter(|n| !n.is_empty()).unwrap_or(&self.default);
        if let Some(s) = self.cache.lock().get(name) {
            return Ok(s.clone());
        }
        let suite = build_backend(name)?;
        self.cache.lock().insert(name.to_string(), suite.clone());
        Ok(suite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ErrorCode;

    #[test]
    fn names() {
        assert_eq!(build_backend("reference").unwrap().name, "reference");
        assert_eq!(build_backend("bogus").unwrap_err().code, ErrorCode::Invalid);
        assert_eq!(build_backend("mock:/does/not/exist.json").unwrap_err().code, ErrorCode::Invalid);
        let reg = BackendRegistry::new("reference");
        assert_eq!(reg.resolve(None).unwrap().name, "reference");
    }
}
