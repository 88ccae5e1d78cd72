//! Service configuration (TOML).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use feedstack_core::{CatalogError, GatewayConfig, PrincipleCatalog};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CATALOG_ID: &str = "default";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("catalog {path}: {source}")]
    Catalog { path: PathBuf, source: CatalogError },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_host() -> String {
    "127.0.0.1".to_string()
}
fn default_port() -> u16 {
    8080
}
fn default_storage_dir() -> PathBuf {
    PathBuf::from("feedstack-data")
}
fn default_stream_buffer() -> usize {
    1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_host")]
    pub host: String,
    #[serde(default = "default_port")]
    pub port: u16,
    #[serde(default = "default_storage_dir")]
    pub storage_dir: PathBuf,
    /// Replaces the shipped catalog as `default`.
    #[serde(default)]
    pub catalog_path: Option<PathBuf>,
    /// Extra catalogs selectable by id at session creation.
    #[serde(default)]
    pub catalogs: BTreeMap<String, PathBuf>,
    /// Frames buffered per subscriber before it is disconnected.
    #[serde(default = "default_stream_buffer")]
    pub stream_buffer: usize,
    #[serde(default)]
    pub gateway: GatewayConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: default_host(),
            port: default_port(),
            storage_dir: default_storage_dir(),
            catalog_path: None,
            catalogs: BTreeMap::new(),
            stream_buffer: default_stream_buffer(),
            gateway: GatewayConfig::default(),
        }
    }
}

impl ServiceConfig {
    /// Reads a config file. Relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.storage_dir);
        if let Some(p) = config.catalog_path.as_mut() {
            resolve(p);
        }
        config.catalogs.values_mut().for_each(resolve);
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::new(),
            message: e.message().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.stream_buffer == 0 {
            return Err(ConfigError::Invalid("stream_buffer must be positive".into()));
        }
        if self.catalogs.contains_key(DEFAULT_CATALOG_ID) {
            return Err(ConfigError::Invalid(format!(
                "catalog id {DEFAULT_CATALOG_ID:?} is reserved; use catalog_path"
            )));
        }
        if self.gateway.timeout_ms == 0 {
            return Err(ConfigError::Invalid("gateway.timeout_ms must be positive".into()));
        }
        Ok(())
    }

    /// Loads every configured catalog.
    pub fn catalogs(&self) -> Result<CatalogRegistry, ConfigError> {
        let load = |path: &PathBuf| -> Result<PrincipleCatalog, ConfigError> {
            let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
                path: path.clone(),
                source,
            })?;
            PrincipleCatalog::from_json(&text).map_err(|source| ConfigError::Catalog {
                path: path.clone(),
                source,
            })
        };
        let default = match &self.catalog_path {
            Some(path) => load(path)?,
            None => PrincipleCatalog::default_catalog(),
        };
        let mut registry = CatalogRegistry::new(default);
        for (id, path) in &self.catalogs {
            registry.insert(id, load(path)?);
        }
        Ok(registry)
    }
}

/// Catalogs by id; always holds `default`.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogRegistry {
    catalogs: BTreeMap<String, PrincipleCatalog>,
}

impl CatalogRegistry {
    pub fn new(default: PrincipleCatalog) -> Self {
        Self {
            catalogs: BTreeMap::from([(DEFAULT_CATALOG_ID.to_string(), default)]),
        }
    }

    pub fn insert(&mut self, id: &str, catalog: PrincipleCatalog) {
        self.catalogs.insert(id.to_string(), catalog);
    }

    pub fn get(&self, id: Option<&str>) -> Option<&PrincipleCatalog> {
        self.catalogs.get(id.unwrap_or(DEFAULT_CATALOG_ID))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.catalogs.keys().map(String::as_str)
    }
}

impl Default for CatalogRegistry {
    fn default() -> Self {
        Self::new(PrincipleCatalog::default_catalog())
    }
}
