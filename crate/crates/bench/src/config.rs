//! Experiment configuration file.
//!
//! One TOML document with a flat section per component. Every section is
//! optional and falls back to its defaults; unknown keys are rejected.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use spadlink_core::equalizer::{EqualizerConfig, EqualizerMode};
use spadlink_core::spad::SpadArrayConfig;
use spadlink_core::tx::{DriveConfig, OfdmConfig, OokConfig};

use crate::link::{Channel, FrontEndSection, LinkConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    BiasCurve,
    BerVsPower,
    BerVsRate,
    ClippingSweep,
    RateVsPower,
    SnrBitsReport,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::BiasCurve,
        Scenario::BerVsPower,
        Scenario::BerVsRate,
        Scenario::ClippingSweep,
        Scenario::RateVsPower,
        Scenario::SnrBitsReport,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::BiasCurve => "bias-curve",
            Scenario::BerVsPower => "ber-vs-power",
            Scenario::BerVsRate => "ber-vs-rate",
            Scenario::ClippingSweep => "clipping-sweep",
            Scenario::RateVsPower => "rate-vs-power",
            Scenario::SnrBitsReport => "snr-bits-report",
        }
    }

    pub fn parse(name: &str) -> Option<Scenario> {
        Scenario::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modulation {
    Ook,
    DcoOfdm,
}

impl Modulation {
    pub fn name(self) -> &'static str {
        match self {
            Modulation::Ook => "ook",
            Modulation::DcoOfdm => "dco-ofdm",
        }
    }
}

pub fn equalizer_name(mode: EqualizerMode) -> &'static str {
    match mode {
        EqualizerMode::LinearOnly => "linear-only",
        EqualizerMode::Volterra => "volterra",
    }
}

fn default_clip_grid() -> Vec<f64> {
    vec![2.0, 2.5, 3.0, 3.5, 4.0, 4.5]
}

/// What to sweep and how long to measure each point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub scenario: Scenario,
    pub modulations: Vec<Modulation>,
    /// Receivers evaluated at every point; empty means `[equalizer].mode`.
    pub equalizers: Vec<EqualizerMode>,
    /// Received optical powers, watts.
    pub power_grid: Vec<f64>,
    /// OOK symbol rates or fixed-rate OFDM bit rates, bits/second.
    pub rate_grid: Vec<f64>,
    pub clip_grid: Vec<f64>,
    pub target_ber: f64,
    pub min_errors: u64,
    pub max_bits: u64,
    pub master_seed: u64,
    /// Rate searches: also evaluate OFDM at the per-power optimal clip level.
    pub optimize_clipping: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            scenario: Scenario::BerVsPower,
            modulations: vec![Modulation::Ook],
            equalizers: Vec::new(),
            power_grid: vec![1e-7, 8.5e-7, 2e-5],
            rate_grid: vec![3.5e8],
            clip_grid: default_clip_grid(),
            target_ber: 2e-3,
            min_errors: 100,
            max_bits: 20_000_000,
            master_seed: 1,
            optimize_clipping: true,
        }
    }
}

/// The whole configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub spad: SpadArrayConfig,
    pub front_end: FrontEndSection,
    pub drive: DriveConfig,
    pub ook: OokConfig,
    pub ofdm: OfdmConfig,
    pub equalizer: EqualizerConfig,
    pub link: LinkConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

fn positive_grid(name: &str, grid: &[f64]) -> Result<(), ConfigError> {
    if grid.is_empty() {
        return Err(ConfigError::Invalid(format!("experiment: {name} must not be empty")));
    }
    if let Some(v) = grid.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(ConfigError::Invalid(format!("experiment: {name} entries must be positive, got {v}")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::parse_named(text, "<config>")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::parse_named(&text, &path.display().to_string())
    }

    fn parse_named(text: &str, path: &str) -> Result<Self, ConfigError> {
        let mut cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| ConfigError::Parse { path: path.to_string(), message: e.message().to_string() })?;
        if cfg.experiment.equalizers.is_empty() {
            cfg.experiment.equalizers = vec![cfg.equalizer.mode];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolved configuration as TOML, exactly as the run used it.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let core = |e: spadlink_core::Error| ConfigError::Invalid(e.to_string());
        let x = &self.experiment;
        positive_grid("power_grid", &x.power_grid)?;
        positive_grid("rate_grid", &x.rate_grid)?;
        positive_grid("clip_grid", &x.clip_grid)?;
        if x.modulations.is_empty() {
            return Err(ConfigError::Invalid("experiment: modulations must not be empty".into()));
        }
        if x.equalizers.is_empty() {
            return Err(ConfigError::Invalid("experiment: equalizers must not be empty".into()));
        }
        if !(x.target_ber > 0.0 && x.target_ber < 0.5) {
            return Err(ConfigError::Invalid("experiment: target_ber must lie in (0, 0.5)".into()));
        }
        if x.min_errors < 20 {
            return Err(ConfigError::Invalid("experiment: min_errors must be at least 20".into()));
        }
        if x.max_bits == 0 {
            return Err(ConfigError::Invalid("experiment: max_bits must be positive".into()));
        }
        if x.scenario == Scenario::ClippingSweep && x.equalizers.len() != 1 {
            return Err(ConfigError::Invalid("experiment: clipping-sweep takes exactly one equalizer".into()));
        }
        if x.scenario == Scenario::SnrBitsReport && x.equalizers.len() != 1 {
            return Err(ConfigError::Invalid("experiment: snr-bits-report takes exactly one equalizer".into()));
        }
        self.channel().validate().map_err(core)?;
        self.ook.validate().map_err(core)?;
        self.ofdm.validate().map_err(core)?;
        self.equalizer.validate().map_err(core)?;
        self.link.validate().map_err(core)?;
        Ok(())
    }

    pub fn channel(&self) -> Channel {
        Channel { spad: self.spad, front_end: self.front_end, drive: self.drive }
    }

    /// Equalizer settings for one receiver variant.
    pub fn equalizer_for(&self, mode: EqualizerMode) -> EqualizerConfig {
        EqualizerConfig { mode, ..self.equalizer }
    }
}
