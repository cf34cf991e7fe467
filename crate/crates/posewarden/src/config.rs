//! Service configuration: a TOML file, then `PW_*` environment overrides,
//! then command-line flags.

use std::net::IpAddr;
use std::path::{Path, PathBuf};

use posewarden_core::perspective::PerspectiveConfig;
use posewarden_core::rules::RuleThresholds;
use posewarden_core::temporal::DebounceConfig;
use serde::Deserialize;

pub const DEFAULT_PORT: u16 = 5000;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("{var}: {detail}")]
    Env { var: &'static str, detail: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: IpAddr,
    pub port: u16,
    pub data_dir: PathBuf,
    /// Fired alerts are POSTed here as JSON when set.
    pub webhook_url: Option<String>,
    pub thresholds: RuleThresholds,
    pub perspective: PerspectiveConfig,
    pub debounce: DebounceConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: IpAddr::from([0, 0, 0, 0]),
            port: DEFAULT_PORT,
            data_dir: PathBuf::from("data"),
            webhook_url: None,
            thresholds: RuleThresholds::default(),
            perspective: PerspectiveConfig::default(),
            debounce: DebounceConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads `path` if given (defaults otherwise) and applies environment
    /// overrides from `env`.
    pub fn load(path: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                Self::from_toml(&text, p)?
            }
            None => Self::default(),
        };
        if let Some(port) = env("PW_PORT") {
            config.port = port.trim().parse().map_err(|_| ConfigError::Env {
                var: "PW_PORT",
                detail: format!("not a port number: {port:?}"),
            })?;
        }
        if let Some(dir) = env("PW_DATA_DIR") {
            config.data_dir = PathBuf::from(dir);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.port == 0 {
            return Err(ConfigError::Invalid("port must be in 1..=65535".into()));
        }
        self.thresholds
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.debounce
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.perspective.profile_threshold > 0.0 && self.perspective.profile_threshold <= 1.0) {
            return Err(ConfigError::Invalid("profile_threshold must be in (0, 1]".into()));
        }
        if let Some(url) = &self.webhook_url {
            if !url.starts_with("http://") && !url.starts_with("https://") {
                return Err(ConfigError::Invalid(format!("webhook_url must be http(s): {url:?}")));
            }
        }
        Ok(())
    }
}
