//! Workbench configuration file.
//!
//! ```json
//! {
//!   "data_dir": "framelab-data",
//!   "codebook_path": null,
//!   "icr_threshold": 0.65,
//!   "bind": "127.0.0.1:8080",
//!   "backend": {
//!     "base_url": "http://127.0.0.1:9000",
//!     "model_name": "text-davinci-003",
//!     "temperature": 0,
//!     "top_p": 1,
//!     "max_tokens": 2,
//!     "timeout_ms": 30000,
//!     "max_parallel": 4,
//!     "retry_limit": 3,
//!     "retry_backoff_ms": 500
//!   }
//! }
//! ```
//!
//! Every field is optional. `FRAMELAB_DATA_DIR` overrides `data_dir`; the
//! backend token is only ever read from `FRAMELAB_BACKEND_TOKEN`.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use framelab_core::annotation::DEFAULT_ICR_THRESHOLD;
use framelab_core::inference::BackendConfig;
use framelab_core::Codebook;
use serde::{Deserialize, Serialize};

pub const DATA_DIR_ENV: &str = "FRAMELAB_DATA_DIR";
pub const TOKEN_ENV: &str = "FRAMELAB_BACKEND_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkbenchConfig {
    pub data_dir: PathBuf,
    pub codebook_path: Option<PathBuf>,
    pub icr_threshold: f64,
    pub bind: SocketAddr,
    pub backend: BackendSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct BackendSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(flatten)]
    pub params: BackendConfig,
}

// Written out by hand: `flatten` hides unknown keys from the inner struct's
// `deny_unknown_fields`, so misspelled backend settings would pass silently.
impl<'de> Deserialize<'de> for BackendSection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let mut map = serde_json::Map::<String, serde_json::Value>::deserialize(d)?;
        let base_url = match map.remove("base_url") {
            None | Some(serde_json::Value::Null) => None,
            Some(v) => Some(String::deserialize(v).map_err(D::Error::custom)?),
        };
        let params = BackendConfig::deserialize(serde_json::Value::Object(map)).map_err(D::Error::custom)?;
        Ok(BackendSection { base_url, params })
    }
}

impl Default for WorkbenchConfig {
    fn default() -> Self {
        WorkbenchConfig {
            data_dir: PathBuf::from("framelab-data"),
            codebook_path: None,
            icr_threshold: DEFAULT_ICR_THRESHOLD,
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            backend: BackendSection::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigFileError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("icr_threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error(transparent)]
    Backend(#[from] framelab_core::inference::ConfigError),
    #[error("codebook {path}: {source}")]
    Codebook { path: PathBuf, source: framelab_core::codebook::CodebookError },
}

impl WorkbenchConfig {
    pub fn from_json(source: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(source)
    }

    /// Load `path` (or defaults when `None`) and validate.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigFileError> {
        let config = match path {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|source| ConfigFileError::Read { path: p.into(), source })?;
                Self::from_json(&text).map_err(|source| ConfigFileError::Parse { path: p.into(), source })?
            }
            None => Self::default(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigFileError> {
        if !(0.0..=1.0).contains(&self.icr_threshold) {
            return Err(ConfigFileError::Threshold(self.icr_threshold));
        }
        self.backend.params.validate()?;
        Ok(())
    }

    pub fn codebook(&self) -> Result<Codebook, ConfigFileError> {
        match &self.codebook_path {
            None => Ok(Codebook::default_codebook()),
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|source| ConfigFileError::Read { path: p.clone(), source })?;
                Codebook::from_json(&text).map_err(|source| ConfigFileError::Codebook { path: p.clone(), source })
            }
        }
    }
}
