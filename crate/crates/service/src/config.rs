//! The single TOML configuration file shared by the service and the
//! command-line tool.
//!
//! ```toml
//! archive_root = "/srv/traces"
//! key_path = "/etc/tracevault/anon.key"
//! aup_path = "/etc/tracevault/aup.txt"
//! listen = "127.0.0.1:8080"
//!
//! [capture]
//! probe_id = "p1"
//! link_id = "l1"
//! max_file_bytes = 268435456
//! max_file_secs = 300
//!
//! [retention]
//! pinned_sample_quota = 16
//! [retention.lifetimes]
//! headers = 604800
//! timeseries = "unbounded"
//! ```
//!
//! Relative paths are taken relative to the directory holding the file.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;
use tracevault_archive::RetentionPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub archive_root: PathBuf,
    /// Catalog database; defaults to `catalog.sqlite` in the archive root.
    #[serde(default)]
    pub catalog_path: Option<PathBuf>,
    /// File holding the 64-hex-digit anonymization key.
    #[serde(default)]
    pub key_path: Option<PathBuf>,
    /// Acceptable use policy text; a short built-in text when absent.
    #[serde(default)]
    pub aup_path: Option<PathBuf>,
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    #[serde(default)]
    pub capture: CaptureSettings,
    #[serde(default)]
    pub retention: RetentionPolicy,
    #[serde(default)]
    pub service: ServiceSettings,
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptureSettings {
    pub probe_id: String,
    pub link_id: String,
    pub max_file_bytes: u64,
    pub max_file_secs: u64,
}

impl Default for CaptureSettings {
    fn default() -> Self {
        CaptureSettings {
            probe_id: "probe0".into(),
            link_id: "link0".into(),
            max_file_bytes: 256 * 1024 * 1024,
            max_file_secs: 300,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSettings {
    /// Download token bucket size and refill per minute, per user.
    pub downloads_per_minute: u32,
    pub kdf_rounds: u32,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        ServiceSettings {
            downloads_per_minute: 10,
            kdf_rounds: tracevault_archive::access::DEFAULT_KDF_ROUNDS,
        }
    }
}

impl Config {
    /// Minimal configuration rooted at `archive_root`.
    pub fn with_root(archive_root: impl Into<PathBuf>) -> Config {
        Config {
            archive_root: archive_root.into(),
            catalog_path: None,
            key_path: None,
            aup_path: None,
            listen: default_listen(),
            capture: CaptureSettings::default(),
            retention: RetentionPolicy::default(),
            service: ServiceSettings::default(),
        }
    }

    pub fn from_toml(text: &str, base: &Path) -> Result<Config, ConfigError> {
        let mut c: Config = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: base.to_path_buf(),
            message: e.to_string(),
        })?;
        c.retention.validate().map_err(|e| ConfigError::Parse {
            path: base.to_path_buf(),
            message: e.to_string(),
        })?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut c.archive_root);
        c.catalog_path.iter_mut().for_each(fix);
        c.key_path.iter_mut().for_each(fix);
        c.aup_path.iter_mut().for_each(fix);
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Config::from_toml(&text, base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn catalog_path(&self) -> PathBuf {
        self.catalog_path
            .clone()
            .unwrap_or_else(|| self.archive_root.join(tracevault_archive::CATALOG_FILE))
    }
}
