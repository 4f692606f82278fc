//! Run configuration and its flat `key = value` file format.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mobility::INTER_RSU_DISTANCE_M;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("unknown configuration key `{key}` (line {line})")]
    UnknownKey { key: String, line: usize },
    #[error("malformed line {line}: expected `key = value`")]
    Malformed { line: usize },
    #[error("cannot read config file {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    fn invalid(field: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// Name of the offending field, when the error concerns one.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { field, .. } => Some(field),
            ConfigError::UnknownKey { key, .. } => Some(key),
            _ => None,
        }
    }
}

/// Inter-vehicle spacing class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// 1-100 m gaps.
    Dense,
    /// 100-200 m gaps.
    Medium,
    /// 200-300 m gaps.
    Sparse,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Dense, Scenario::Medium, Scenario::Sparse];

    pub fn id(self) -> u8 {
        match self {
            Scenario::Dense => 1,
            Scenario::Medium => 2,
            Scenario::Sparse => 3,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(Scenario::Dense),
            2 => Some(Scenario::Medium),
            3 => Some(Scenario::Sparse),
            _ => None,
        }
    }

    /// Uniform gap interval between successive vehicles of a lane, in meters.
    pub fn spacing_m(self) -> (f64, f64) {
        match self {
            Scenario::Dense => (1.0, 100.0),
            Scenario::Medium => (100.0, 200.0),
            Scenario::Sparse => (200.0, 300.0),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim()
            .parse::<u8>()
            .ok()
            .and_then(Scenario::from_id)
            .ok_or_else(|| format!("expected 1, 2 or 3, got `{s}`"))
    }
}

/// Topology policy under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Spectral clustering plus slice leaders; RSU carries video only.
    Proposed,
    /// Every vehicle on its nearest RSU, one shared pool.
    Baseline1,
    /// Baseline 1 plus V2V relaying of low-SINR vehicles.
    Baseline2,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Proposed, Mode::Baseline1, Mode::Baseline2];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Proposed => "proposed",
            Mode::Baseline1 => "baseline1",
            Mode::Baseline2 => "baseline2",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "proposed" => Ok(Mode::Proposed),
            "baseline1" => Ok(Mode::Baseline1),
            "baseline2" => Ok(Mode::Baseline2),
            other => Err(format!(
                "expected proposed, baseline1 or baseline2, got `{other}`"
            )),
        }
    }
}

/// Everything needed to reproduce one run bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub mode: Mode,
    /// Neighborhood size of the similarity kernel, meters.
    pub sigma_m: f64,
    /// Measured TTIs (1 ms each), after the warm-up.
    pub duration_tti: u64,
    /// TTIs simulated before measurement starts.
    pub warmup_tti: u64,
    pub reslice_period_tti: u64,
    pub seed: u64,
    pub highway_length_m: f64,
    pub n_rsu: u32,
    /// Baseline 2 offloads vehicles whose wideband V2I SINR is below this.
    pub offload_threshold_db: f64,
    pub output_dir: PathBuf,
    /// Squared-distance Gaussian kernel instead of the plain-distance one.
    pub squared_similarity: bool,
    /// Share of vehicles that stream video and may act as slice leaders.
    pub video_fraction: f64,
    pub n_prb: u32,
    pub rsu_tx_power_dbm: f64,
    pub sl_tx_power_dbm: f64,
    pub noise_figure_db: f64,
    pub antenna_gain_db: f64,
    pub shadowing_v2i_db: f64,
    pub shadowing_v2v_db: f64,
    pub pf_beta: f64,
    pub harq_max_attempts: u32,
    pub relay_range_m: f64,
    pub dump_topology: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            scenario: Scenario::Sparse,
            mode: Mode::Proposed,
            sigma_m: 5.0,
            duration_tti: 10_000,
            warmup_tti: 500,
            reslice_period_tti: 100,
            seed: 1,
            highway_length_m: 2.0 * INTER_RSU_DISTANCE_M,
            n_rsu: 2,
            offload_threshold_db: 0.0,
            output_dir: PathBuf::from("out"),
            squared_similarity: true,
            video_fraction: 0.2,
            n_prb: 50,
            rsu_tx_power_dbm: 46.0,
            sl_tx_power_dbm: 20.0,
            noise_figure_db: 9.0,
            antenna_gain_db: 0.0,
            shadowing_v2i_db: 8.0,
            shadowing_v2v_db: 3.0,
            pf_beta: 0.01,
            harq_max_attempts: 4,
            relay_range_m: 500.0,
            dump_topology: false,
        }
    }
}

/// Keys accepted in config files, in manifest order.
pub const CONFIG_KEYS: &[&str] = &[
    "scenario_id",
    "mode",
    "sigma_m",
    "duration_tti",
    "warmup_tti",
    "reslice_period_tti",
    "seed",
    "highway_length_m",
    "n_rsu",
    "offload_threshold_db",
    "output_dir",
    "squared_similarity",
    "video_fraction",
    "n_prb",
    "rsu_tx_power_dbm",
    "sl_tx_power_dbm",
    "noise_figure_db",
    "antenna_gain_db",
    "shadowing_v2i_db",
    "shadowing_v2v_db",
    "pf_beta",
    "harq_max_attempts",
    "relay_range_m",
    "dump_topology",
];

fn parse_field<T: FromStr>(field: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse::<T>()
        .map_err(|e| ConfigError::invalid(field, format!("cannot parse `{value}`: {e}")))
}

impl SimConfig {
    /// Total number of steps executed by a run.
    pub fn total_tti(&self) -> u64 {
        self.warmup_tti + self.duration_tti
    }

    pub fn measured_seconds(&self) -> f64 {
        self.duration_tti as f64 * 1e-3
    }

    /// Set one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "scenario_id" | "scenario" => {
                self.scenario = value
                    .parse()
                    .map_err(|e: String| ConfigError::invalid("scenario_id", e))?
            }
            "mode" => {
                self.mode = value
                    .parse()
                    .map_err(|e: String| ConfigError::invalid("mode", e))?
            }
            "sigma_m" => self.sigma_m = parse_field(key, value)?,
            "duration_tti" => self.duration_tti = parse_field(key, value)?,
            "warmup_tti" => self.warmup_tti = parse_field(key, value)?,
            "reslice_period_tti" => self.reslice_period_tti = parse_field(key, value)?,
            "seed" => self.seed = parse_field(key, value)?,
            "highway_length_m" => self.highway_length_m = parse_field(key, value)?,
            "n_rsu" => self.n_rsu = parse_field(key, value)?,
            "offload_threshold_db" => self.offload_threshold_db = parse_field(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value.trim()),
            "squared_similarity" => self.squared_similarity = parse_field(key, value)?,
            "video_fraction" => self.video_fraction = parse_field(key, value)?,
            "n_prb" => self.n_prb = parse_field(key, value)?,
            "rsu_tx_power_dbm" => self.rsu_tx_power_dbm = parse_field(key, value)?,
            "sl_tx_power_dbm" => self.sl_tx_power_dbm = parse_field(key, value)?,
            "noise_figure_db" => self.noise_figure_db = parse_field(key, value)?,
            "antenna_gain_db" => self.antenna_gain_db = parse_field(key, value)?,
            "shadowing_v2i_db" => self.shadowing_v2i_db = parse_field(key, value)?,
            "shadowing_v2v_db" => self.shadowing_v2v_db = parse_field(key, value)?,
            "pf_beta" => self.pf_beta = parse_field(key, value)?,
            "harq_max_attempts" => self.harq_max_attempts = parse_field(key, value)?,
            "relay_range_m" => self.relay_range_m = parse_field(key, value)?,
            "dump_topology" => self.dump_topology = parse_field(key, value)?,
            other => {
                return Err(ConfigError::UnknownKey {
                    key: other.to_string(),
                    line: 0,
                })
            }
        }
        Ok(())
    }

    /// Apply a flat `key = value` document on top of `self`. `#` starts a comment.
    pub fn apply_str(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Malformed { line: line_no })?;
            self.set(key.trim(), value).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => {
                    ConfigError::UnknownKey { key, line: line_no }
                }
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = SimConfig::default();
        cfg.apply_str(&text)?;
        Ok(cfg)
    }

    /// Render in the same flat format that [`SimConfig::apply_str`] reads.
    pub fn to_flat_string(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.value_of(key));
            out.push('\n');
        }
        out
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "scenario_id" => self.scenario.to_string(),
            "mode" => self.mode.to_string(),
            "sigma_m" => self.sigma_m.to_string(),
            "duration_tti" => self.duration_tti.to_string(),
            "warmup_tti" => self.warmup_tti.to_string(),
            "reslice_period_tti" => self.reslice_period_tti.to_string(),
            "seed" => self.seed.to_string(),
            "highway_length_m" => self.highway_length_m.to_string(),
            "n_rsu" => self.n_rsu.to_string(),
            "offload_threshold_db" => self.offload_threshold_db.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "squared_similarity" => self.squared_similarity.to_string(),
            "video_fraction" => self.video_fraction.to_string(),
            "n_prb" => self.n_prb.to_string(),
            "rsu_tx_power_dbm" => self.rsu_tx_power_dbm.to_string(),
            "sl_tx_power_dbm" => self.sl_tx_power_dbm.to_string(),
            "noise_figure_db" => self.noise_figure_db.to_string(),
            "antenna_gain_db" => self.antenna_gain_db.to_string(),
            "shadowing_v2i_db" => self.shadowing_v2i_db.to_string(),
            "shadowing_v2v_db" => self.shadowing_v2v_db.to_string(),
            "pf_beta" => self.pf_beta.to_string(),
            "harq_max_attempts" => self.harq_max_attempts.to_string(),
            "relay_range_m" => self.relay_range_m.to_string(),
            "dump_topology" => self.dump_topology.to_string(),
            _ => unreachable!("value_of called with unknown key {key}"),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.duration_tti == 0 {
            return Err(ConfigError::invalid("duration_tti", "must be positive"));
        }
        if self.reslice_period_tti == 0 {
            return Err(ConfigError::invalid(
                "reslice_period_tti",
                "must be positive",
            ));
        }
        if self.duration_tti < self.reslice_period_tti {
            return Err(ConfigError::invalid(
                "duration_tti",
                format!(
                    "{} is shorter than reslice_period_tti = {}",
                    self.duration_tti, self.reslice_period_tti
                ),
            ));
        }
        if !(self.sigma_m > 0.0 && self.sigma_m.is_finite()) {
            return Err(ConfigError::invalid("sigma_m", "must be a positive number"));
        }
        if !(self.highway_length_m > 0.0 && self.highway_length_m.is_finite()) {
            return Err(ConfigError::invalid(
                "highway_length_m",
                "must be a positive number",
            ));
        }
        if self.n_rsu == 0 {
            return Err(ConfigError::invalid("n_rsu", "must be positive"));
        }
        if f64::from(self.n_rsu) * INTER_RSU_DISTANCE_M > self.highway_length_m + 1e-9 {
            return Err(ConfigError::invalid(
                "n_rsu",
                format!(
                    "{} RSUs spaced {INTER_RSU_DISTANCE_M} m do not fit on {} m",
                    self.n_rsu, self.highway_length_m
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.video_fraction) {
            return Err(ConfigError::invalid("video_fraction", "must lie in [0, 1]"));
        }
        if self.n_prb == 0 {
            return Err(ConfigError::invalid("n_prb", "must be positive"));
        }
        if !(self.pf_beta > 0.0 && self.pf_beta < 1.0) {
            return Err(ConfigError::invalid("pf_beta", "must lie in (0, 1)"));
        }
        if self.harq_max_attempts == 0 {
            return Err(ConfigError::invalid(
                "harq_max_attempts",
                "must be positive",
            ));
        }
        if self.offload_threshold_db.is_nan() {
            return Err(ConfigError::invalid(
                "offload_threshold_db",
                "must not be NaN",
            ));
        }
        for (field, v) in [
            ("shadowing_v2i_db", self.shadowing_v2i_db),
            ("shadowing_v2v_db", self.shadowing_v2v_db),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::invalid(field, "must be a non-negative number"));
            }
        }
        if !(self.relay_range_m > 0.0) {
            return Err(ConfigError::invalid("relay_range_m", "must be positive"));
        }
        Ok(())
    }
}
