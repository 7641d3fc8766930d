//! Engine configuration, read from a TOML file.
//!
//! ```toml
//! mode = "fused"              # or "split"
//! match_threshold = 0.8
//! repair_budget = 2
//! retry_budget = 5
//! strict_rc_threshold = false
//! mock_script = "scripts/ce1.json"
//!
//! [live]
//! chat_url = "https://api.openai.com/v1"
//! default_model = "gpt-4-0613"
//! api_key_env = "OPENAI_API_KEY"
//!
//! [server]
//! bind = "127.0.0.1:8080"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{LiveConfig, RetryPolicy};
use crate::grounding::{StructuringMode, DEFAULT_REPAIR_BUDGET, DEFAULT_THRESHOLD};

pub const DEFAULT_RETRY_BUDGET: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    /// Directory of static console files served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub mode: StructuringMode,
    /// Fuzzy acceptance threshold for material matching.
    pub match_threshold: f64,
    /// Structuring repair requests after the first call.
    pub repair_budget: u32,
    /// Execute-and-check attempts per turn.
    pub retry_budget: u32,
    pub strict_rc_threshold: bool,
    /// When set, the scripted mock backend replaces the live one.
    pub mock_script: Option<PathBuf>,
    /// User alias table replacing the bundled one.
    pub alias_table: Option<PathBuf>,
    /// Slot schema overrides, per task.
    pub slot_schemas: Option<PathBuf>,
    /// Rule parameter overrides.
    pub rule_params: Option<PathBuf>,
    pub live: LiveConfig,
    pub retry: RetryPolicy,
    pub server: ServerConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mode: StructuringMode::Fused,
            match_threshold: DEFAULT_THRESHOLD,
            repair_budget: DEFAULT_REPAIR_BUDGET,
            retry_budget: DEFAULT_RETRY_BUDGET,
            strict_rc_threshold: false,
            mock_script: None,
            alias_table: None,
            slot_schemas: None,
            rule_params: None,
            live: LiveConfig::default(),
            retry: RetryPolicy::default(),
            server: ServerConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl EngineConfig {
    /// Reads a config file. Relative paths inside it are resolved against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.mock_script,
            &mut cfg.alias_table,
            &mut cfg.slot_schemas,
            &mut cfg.rule_params,
            &mut cfg.server.static_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::new(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.match_threshold) {
            return Err(ConfigError::Invalid(format!(
                "match_threshold must be in [0, 1], got {}",
                self.match_threshold
            )));
        }
        if self.retry_budget == 0 {
            return Err(ConfigError::Invalid("retry_budget must be at least 1".into()));
        }
        Ok(())
    }
}
