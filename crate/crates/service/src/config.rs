use std::path::{Path, PathBuf};

use mpe_core::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("environment variable {name}: {reason}")]
    Env { name: &'static str, reason: String },
    #[error("keyword list: {0}")]
    Keywords(#[from] mpe_core::catalog::KeywordConfigError),
}

/// Service settings. File values are overridden by `MPE_*` environment variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub catalog: PathBuf,
    /// Root for relative image URIs; defaults to the catalog directory.
    pub image_root: Option<PathBuf>,
    pub bind: String,
    pub port: u16,
    pub backend: String,
    /// Threads per batch extraction or evaluation.
    pub parallelism: usize,
    /// Concurrent background jobs.
    pub workers: usize,
    /// Path to a keyword rules TOML file.
    pub keywords: Option<PathBuf>,
    /// When set, every request must send `Authorization: Bearer <token>`.
    pub token: Option<String>,
    pub pipeline: PipelineConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            catalog: PathBuf::from("catalog"),
            image_root: None,
            bind: "127.0.0.1".into(),
            port: 8080,
            backend: "reference".into(),
            parallelism: 4,
            workers: 2,
            keywords: None,
            token: None,
            pipeline: PipelineConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml_str(s: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(s).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })
    }

    /// Reads `path` if given, then applies the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let s = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.to_path_buf(), source })?;
                Self::from_toml_str(&s, p)?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(name: &'static str, v: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            v.trim().parse().map_err(|e: T::Err| ConfigError::Env { name, reason: e.to_string() })
        }
        if let Some(v) = var("MPE_PORT") {
            self.port = parse("MPE_PORT", &v)?;
        }
        if let Some(v) = var("MPE_BACKEND") {
            self.backend = v;
        }
        if let Some(v) = var("MPE_PARALLELISM") {
            self.parallelism = parse("MPE_PARALLELISM", &v)?;
        }
        if let Some(v) = var("MPE_KEYWORDS") {
            self.keywords = Some(PathBuf::from(v));
        }
        if let Some(v) = var("MPE_TOKEN") {
            self.token = Some(v);
        }
        Ok(())
    }

    /// Pipeline settings with the keyword file, if any, loaded in.
    pub fn pipeline_config(&self) -> Result<PipelineConfig, ConfigError> {
        let mut p = self.pipeline.clone();
        if let Some(path) = &self.keywords {
            p.keywords = mpe_core::catalog::KeywordRules::load(path)?;
        }
        Ok(p)
    }

    pub fn image_root(&self) -> PathBuf {
        self.image_root.clone().unwrap_or_else(|| self.catalog.clone())
    }
}
