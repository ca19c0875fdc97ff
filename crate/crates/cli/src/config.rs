//! `refcheck.toml`.
//!
//! ```toml
//! ledger = "refcheck.ledger"
//! format = "text"
//!
//! [thresholds]
//! drift = 0.11
//! equivalence = 0.8
//! min_samples = 2
//!
//! [[profiles]]
//! name = "prod-4o"
//! identifier = "gpt-4o-2024-08-06"
//! endpoint = "https://api.example.com/"
//! auth_token_ref = "PROVIDER_API_KEY"   # env var name, never the token
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use refcheck_core::claims::DEFAULT_EQUIVALENCE_THRESHOLD;
use refcheck_core::drift::DEFAULT_DRIFT_THRESHOLD;
use refcheck_core::model::DEFAULT_MIN_SAMPLES;
use serde::Deserialize;

use crate::error::CliError;

pub const DEFAULT_CONFIG: &str = "refcheck.toml";
pub const DEFAULT_LEDGER: &str = "refcheck.ledger";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub drift: f64,
    pub equivalence: f64,
    pub min_samples: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            drift: DEFAULT_DRIFT_THRESHOLD,
            equivalence: DEFAULT_EQUIVALENCE_THRESHOLD,
            min_samples: DEFAULT_MIN_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub name: String,
    pub identifier: String,
    pub endpoint: String,
    pub auth_token_ref: Option<String>,
    pub prompt: Option<String>,
    pub path: Option<String>,
    pub account_tag: Option<String>,
    pub region_tag: Option<String>,
    pub max_in_flight: Option<u32>,
    pub inter_request_delay_ms: Option<u64>,
    pub request_timeout_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub ledger: Option<PathBuf>,
    pub format: Option<Format>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub profiles: Vec<Profile>,
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: CliConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// `explicit` must exist; otherwise `refcheck.toml` in the working
    /// directory is used when present.
    pub fn load(explicit: Option<&Path>) -> Result<Self, CliError> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None if Path::new(DEFAULT_CONFIG).exists() => PathBuf::from(DEFAULT_CONFIG),
            None => return Ok(CliConfig::default()),
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let mut names = BTreeSet::new();
        for p in &self.profiles {
            if !names.insert(p.name.as_str()) {
                return Err(CliError::Config(format!("duplicate profile name {:?}", p.name)));
            }
        }
        let t = &self.thresholds;
        if !(t.drift.is_finite() && t.drift >= 0.0) {
            return Err(CliError::Config("thresholds.drift must be a finite number >= 0".into()));
        }
        if !(0.0..=1.0).contains(&t.equivalence) {
            return Err(CliError::Config("thresholds.equivalence must lie in [0, 1]".into()));
        }
        if t.min_samples == 0 {
            return Err(CliError::Config("thresholds.min_samples must be at least 1".into()));
        }
        Ok(())
    }

    pub fn profile(&self, name: &str) -> Result<&Profile, CliError> {
        self.profiles
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| CliError::Config(format!("no profile named {name:?}")))
    }
}
