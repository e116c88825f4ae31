//! Session configuration file.
//!
//! TOML document; every key is optional and falls back to the embedded
//! default shown here:
//!
//! ```toml
//! tick_rate_hz = 1000.0
//! batch_size = 10000          # events per recording batch file
//! force_sample_hz = 100.0     # force-feedback recording rate (>= tick rate records every tick)
//! sensitive_labels = [2, 3]   # labels that trigger warnings
//! sensitive_names = ["Facial Nerve"]
//! default_burr = 6            # catalog index; omitted = largest cutting burr
//!
//! [audio]
//! p_max = 2.0
//! f_max = 5.0                 # N
//!
//! [haptic]
//! a_drill = 0.1               # N
//! frequency = 628.3185307179587  # rad/s
//! k_c = 10.0                  # N per unit overlap fraction
//!
//! [hardness]                  # damage to remove one voxel, per label (default 1.0)
//! 1 = 1.0
//!
//! [[burrs]]                   # omitted = 1/2/4/6 mm x cutting/diamond
//! radius_mm = 6.0
//! tip = "cutting"
//! brr = 12.0
//! ```
//!
//! Environment overrides (applied after the file): `VOXDRILL_TICK_RATE_HZ`,
//! `VOXDRILL_BATCH_SIZE`, `VOXDRILL_FORCE_SAMPLE_HZ`, and
//! `VOXDRILL_SENSITIVE_LABELS` (comma-separated).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drill::{default_burr_catalog, largest_cutting, AudioConfig, Burr, DrillError, DrillModel, HapticConfig};
use crate::volume::SegmentTable;

pub const ENV_PREFIX: &str = "VOXDRILL_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("config value `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error(transparent)]
    Drill(#[from] DrillError),
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub tick_rate_hz: f64,
    pub batch_size: usize,
    pub force_sample_hz: f64,
    pub burrs: Vec<Burr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub default_burr: Option<usize>,
    pub audio: AudioConfig,
    pub haptic: HapticConfig,
    pub sensitive_labels: BTreeSet<u16>,
    pub sensitive_names: Vec<String>,
    pub hardness: BTreeMap<String, f64>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            tick_rate_hz: 1000.0,
            batch_size: 10_000,
            force_sample_hz: 100.0,
            burrs: default_burr_catalog(),
            default_burr: None,
            audio: AudioConfig::default(),
            haptic: HapticConfig::default(),
            sensitive_labels: BTreeSet::new(),
            sensitive_names: Vec::new(),
            hardness: BTreeMap::new(),
        }
    }
}

impl SessionConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: SessionConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.tick_rate_hz.is_finite() && self.tick_rate_hz > 0.0) {
            return Err(invalid("tick_rate_hz", "must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be >= 1"));
        }
        if !(self.force_sample_hz.is_finite() && self.force_sample_hz > 0.0) {
            return Err(invalid("force_sample_hz", "must be > 0"));
        }
        if self.burrs.is_empty() {
            return Err(invalid("burrs", "catalog is empty"));
        }
        for b in &self.burrs {
            b.validate()?;
        }
        if let Some(id) = self.default_burr {
            if id >= self.burrs.len() {
                return Err(invalid("default_burr", format!("index {id} outside catalog of {}", self.burrs.len())));
            }
        }
        self.audio.validate()?;
        self.haptic.validate()?;
        self.hardness_by_label()?;
        Ok(())
    }

    pub fn hardness_by_label(&self) -> Result<BTreeMap<u16, f64>, ConfigError> {
        let mut out = BTreeMap::new();
        for (k, &v) in &self.hardness {
            let label: u16 = k.parse().map_err(|_| invalid(&format!("hardness.{k}"), "key must be a label value"))?;
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(&format!("hardness.{k}"), "must be > 0"));
            }
            out.insert(label, v);
        }
        Ok(out)
    }

    /// Applies `VOXDRILL_*` overrides from the given variables.
    pub fn apply_env<I>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        for (key, value) in vars {
            let Some(name) = key.strip_prefix(ENV_PREFIX) else { continue };
            let bad = |why: &str| invalid(&key, format!("{why}: {value:?}"));
            match name {
                "TICK_RATE_HZ" => self.tick_rate_hz = value.parse().map_err(|_| bad("not a number"))?,
                "BATCH_SIZE" => self.batch_size = value.parse().map_err(|_| bad("not an integer"))?,
                "FORCE_SAMPLE_HZ" => self.force_sample_hz = value.parse().map_err(|_| bad("not a number"))?,
                "SENSITIVE_LABELS" => {
                    self.sensitive_labels = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(str::parse)
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad("expected comma-separated labels"))?;
                }
                _ => {}
            }
        }
        self.validate()
    }

    /// Sensitive labels: configured labels, configured names resolved against
    /// the table, and segments already flagged in the table.
    pub fn resolve_sensitive(&self, segments: &SegmentTable) -> Result<BTreeSet<u16>, ConfigError> {
        let mut out: BTreeSet<u16> = self.sensitive_labels.clone();
        out.extend(segments.sensitive_labels());
        for name in &self.sensitive_names {
            let label = segments
                .label_by_name(name)
                .ok_or_else(|| invalid("sensitive_names", format!("no segment named {name:?}")))?;
            out.insert(label);
        }
        Ok(out)
    }

    pub fn drill_model(&self, segments: &SegmentTable) -> Result<DrillModel, ConfigError> {
        Ok(DrillModel {
            audio: self.audio,
            haptic: self.haptic,
            hardness: self.hardness_by_label()?,
            sensitive: self.resolve_sensitive(segments)?,
        })
    }

    pub fn initial_burr(&self) -> usize {
        self.default_burr.or_else(|| largest_cutting(&self.burrs)).unwrap_or(0)
    }

    /// Ticks between recorded force samples (at least 1).
    pub fn force_interval_ticks(&self) -> u64 {
        ((self.tick_rate_hz / self.force_sample_hz).round() as u64).max(1)
    }
}
