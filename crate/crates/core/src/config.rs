//! Run configuration, read from TOML.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{HorizonRule, MIN_PERIOD_DAYS};
use crate::model::PriorSpec;
use crate::observation::DelayDistribution;
use crate::sampler::SamplerConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("{0} does not exist")]
    MissingFile(String),
    #[error("region {0} listed twice")]
    DuplicateRegion(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Parameters whose posterior is carried to later regions, and the order of
/// the regions that pass it on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Chaining {
    pub order: Vec<String>,
    pub params: Vec<String>,
}

impl Default for Chaining {
    fn default() -> Self {
        Chaining {
            order: vec!["IN".into(), "OH".into()],
            params: vec!["gamma".into(), "phi".into()],
        }
    }
}

/// Negative binomial infection-to-death delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelaySettings {
    pub alpha: f64,
    pub beta: f64,
    pub max_delay: usize,
}

impl Default for DelaySettings {
    fn default() -> Self {
        DelaySettings {
            alpha: 21.0,
            beta: 1.1,
            max_delay: 40,
        }
    }
}

impl DelaySettings {
    pub fn distribution(&self) -> Result<DelayDistribution, ConfigError> {
        DelayDistribution::negative_binomial(self.alpha, self.beta, self.max_delay)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_period_days() -> usize {
    7
}

fn default_national() -> Option<String> {
    Some("US".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub timeseries: PathBuf,
    /// Survey JSON; the bundled surveys when absent.
    #[serde(default)]
    pub surveys: Option<PathBuf>,
    /// Population CSV; the bundled table when absent.
    #[serde(default)]
    pub populations: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Regions to fit; every region in the time series when empty.
    #[serde(default)]
    pub regions: Vec<String>,
    #[serde(default)]
    pub horizon: HorizonRule,
    /// Last day used; the end of the data when absent.
    #[serde(default)]
    pub end_date: Option<NaiveDate>,
    #[serde(default = "default_period_days")]
    pub period_days: usize,
    #[serde(default)]
    pub priors: PriorSpec,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub chaining: Chaining,
    #[serde(default)]
    pub delay: DelaySettings,
    /// Code of the sum over all fitted regions; `None` skips it.
    #[serde(default = "default_national")]
    pub national: Option<String>,
}

impl RunConfig {
    /// A configuration with defaults around one time-series file.
    pub fn new(timeseries: impl Into<PathBuf>) -> Self {
        RunConfig {
            timeseries: timeseries.into(),
            surveys: None,
            populations: None,
            output: default_output(),
            regions: Vec::new(),
            horizon: HorizonRule::default(),
            end_date: None,
            period_days: default_period_days(),
            priors: PriorSpec::default(),
            sampler: SamplerConfig::default(),
            chaining: Chaining::default(),
            delay: DelaySettings::default(),
            national: default_national(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.message().to_string()))?;
        cfg.normalize();
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    /// Reads a file; relative paths inside are taken from its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.timeseries);
        rebase(&mut cfg.output);
        if let Some(p) = cfg.surveys.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.populations.as_mut() {
            rebase(p);
        }
        Ok(cfg)
    }

    fn normalize(&mut self) {
        for r in self.regions.iter_mut().chain(self.chaining.order.iter_mut()) {
            *r = r.trim().to_uppercase();
        }
        if let Some(n) = self.national.as_mut() {
            *n = n.trim().to_uppercase();
        }
    }

    /// Checks everything that can be checked without reading the inputs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut seen = BTreeSet::new();
        for r in &self.regions {
            if r.is_empty() {
                return Err(ConfigError::Invalid("empty region code".into()));
            }
            if !seen.insert(r) {
                return Err(ConfigError::DuplicateRegion(r.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        for r in &self.chaining.order {
            if !seen.insert(r) {
                return Err(ConfigError::DuplicateRegion(r.clone()));
            }
        }
        for p in &self.chaining.params {
            self.priors
                .get(p)
                .map_err(|_| ConfigError::Invalid(format!("cannot chain unknown parameter {p}")))?;
            if p == "s1" || p == "i1" {
                return Err(ConfigError::Invalid(format!("{p} has a joint prior and cannot be chained")));
            }
        }
        if self.period_days < MIN_PERIOD_DAYS {
            return Err(ConfigError::Invalid(format!(
                "period_days must be at least {MIN_PERIOD_DAYS}, got {}",
                self.period_days
            )));
        }
        self.priors.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.sampler.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.delay.distribution()?;
        for p in [Some(&self.timeseries), self.surveys.as_ref(), self.populations.as_ref()]
            .into_iter()
            .flatten()
        {
            if !p.is_file() {
                return Err(ConfigError::MissingFile(p.display().to_string()));
            }
        }
        Ok(())
    }
}
