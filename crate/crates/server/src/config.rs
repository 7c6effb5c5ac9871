use std::collections::HashMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use nocode_core::gateway::{ProviderConfig, ProviderMode};
use nocode_core::runner::{RunnerConfig, DEFAULT_LOG_LINES, DEFAULT_PORT_RANGE};
use nocode_core::{Error, Result};

/// Runner settings as written in the config file (durations in seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunnerSection {
    pub host: String,
    pub port_range: (u16, u16),
    pub readiness_timeout_s: f64,
    pub stop_grace_s: f64,
    pub log_lines: usize,
    pub install_timeout_s: f64,
}

impl Default for RunnerSection {
    fn default() -> Self {
        RunnerSection {
            host: "127.0.0.1".into(),
            port_range: DEFAULT_PORT_RANGE,
            readiness_timeout_s: 30.0,
            stop_grace_s: 2.0,
            log_lines: DEFAULT_LOG_LINES,
            install_timeout_s: 600.0,
        }
    }
}

impl RunnerSection {
    pub fn to_runner_config(&self) -> Result<RunnerConfig> {
        let secs = |name: &str, v: f64| {
            Duration::try_from_secs_f64(v).map_err(|_| Error::Config(format!("runner.{name} must be a non-negative number")))
        };
        if self.port_range.0 > self.port_range.1 {
            return Err(Error::Config(format!(
                "runner.port_range {}-{} is empty",
                self.port_range.0, self.port_range.1
            )));
        }
        Ok(RunnerConfig {
            host: self.host.clone(),
            port_range: self.port_range,
            readiness_timeout: secs("readiness_timeout_s", self.readiness_timeout_s)?,
            stop_grace: secs("stop_grace_s", self.stop_grace_s)?,
            log_lines: self.log_lines.max(1),
            install_timeout: secs("install_timeout_s", self.install_timeout_s)?,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    pub data_root: PathBuf,
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    /// Static operator token. Without one the API is open (local use only).
    #[serde(default, skip_serializing)]
    pub token: Option<String>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    #[serde(default)]
    pub profiles_dir: Option<PathBuf>,
    pub provider: ProviderConfig,
    #[serde(default)]
    pub runner: RunnerSection,
}

fn default_bind() -> SocketAddr {
    "127.0.0.1:8080".parse().expect("valid literal")
}

fn default_workers() -> usize {
    2
}

impl ServerConfig {
    /// Mock-mode defaults rooted at `data_root`.
    pub fn local(data_root: impl Into<PathBuf>) -> Self {
        let data_root = data_root.into();
        ServerConfig {
            provider: ProviderConfig::mock(data_root.join("fixtures"), "gpt-4"),
            data_root,
            bind: default_bind(),
            token: None,
            workers: default_workers(),
            templates_dir: None,
            profiles_dir: None,
            runner: RunnerSection::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Reads the file (if any), then applies `NOCODE_*` overrides from `env`.
    pub fn load(path: Option<&Path>, env: &HashMap<String, String>) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text)?
            }
            None => Self::local(env.get("NOCODE_DATA_ROOT").map(String::as_str).unwrap_or("nocode-data")),
        };
        config.apply_env(env)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_process_env(path: Option<&Path>) -> Result<Self> {
        Self::load(path, &std::env::vars().collect())
    }

    pub fn apply_env(&mut self, env: &HashMap<String, String>) -> Result<()> {
        let get = |k: &str| env.get(k).map(|v| v.trim()).filter(|v| !v.is_empty());
        let bad = |k: &str, v: &str| Error::Config(format!("{k}={v} is not valid"));
        if let Some(v) = get("NOCODE_DATA_ROOT") {
            self.data_root = v.into();
        }
        if let Some(v) = get("NOCODE_BIND") {
            self.bind = v.parse().map_err(|_| bad("NOCODE_BIND", v))?;
        }
        if let Some(v) = get("NOCODE_TOKEN") {
            self.token = Some(v.to_string());
        }
        if let Some(v) = get("NOCODE_WORKERS") {
            self.workers = v.parse().map_err(|_| bad("NOCODE_WORKERS", v))?;
        }
        if let Some(v) = get("NOCODE_PROVIDER_MODE") {
            self.provider.mode = match v {
                "live" => ProviderMode::Live,
                "mock" => ProviderMode::Mock,
                _ => return Err(bad("NOCODE_PROVIDER_MODE", v)),
            };
        }
        if let Some(v) = get("NOCODE_PROVIDER_URL") {
            self.provider.endpoint_url = Some(v.to_string());
        }
        if let Some(v) = get("NOCODE_PROVIDER_KEY") {
            self.provider.credential = Some(v.to_string());
        }
        if let Some(v) = get("NOCODE_MODEL") {
            self.provider.model_id = v.to_string();
        }
        if let Some(v) = get("NOCODE_FIXTURES_DIR") {
            self.provider.fixtures_dir = Some(v.into());
        }
        if let Some(v) = get("NOCODE_PORT_RANGE") {
            let (a, b) = v.split_once('-').ok_or_else(|| bad("NOCODE_PORT_RANGE", v))?;
            let a = a.trim().parse().map_err(|_| bad("NOCODE_PORT_RANGE", v))?;
            let b = b.trim().parse().map_err(|_| bad("NOCODE_PORT_RANGE", v))?;
            self.runner.port_range = (a, b);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.token.as_deref().is_some_and(|t| t.trim().is_empty()) {
            return Err(Error::Config("token must not be blank".into()));
        }
        self.provider.validate()?;
        self.runner.to_runner_config()?;
        Ok(())
    }

    pub fn db_path(&self) -> PathBuf {
        self.data_root.join("nocode.sqlite")
    }

    pub fn objects_dir(&self) -> PathBuf {
        self.data_root.join("objects")
    }

    pub fn workspaces_dir(&self) -> PathBuf {
        self.data_root.join("workspaces")
    }
}
