//! Experiment configuration files (TOML).
//!
//! ```toml
//! schema_version = 1
//! name = "near_far_snr"
//! trials = 100
//! base_seed = 1
//! detection_tol_deg = 0.1
//!
//! [scene]
//! doas_deg = [-2.0, 3.0, 75.0]
//! snr_db = [30.0, -10.0, 15.0]
//! noise_power = 1.0
//! snapshots = 10000
//!
//! [geometry]
//! kind = "ula"
//! sensors = 16
//!
//! [sweep]
//! kind = "snr"
//! source_index = 1
//! values = [-20.0, -10.0, 0.0]
//!
//! [[pipelines]]
//! kind = "onebit_bif"
//! bits = 4
//!
//! [[pipelines]]
//! kind = "conventional"
//! bits = 6
//! ```

use std::path::Path;

use bifdoa_core::array::{ArrayGeometry, SourceScene};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("unsupported schema_version {found} (expected {SCHEMA_VERSION})")]
    Schema { found: u32 },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub doas_deg: Vec<f64>,
    pub snr_db: Vec<f64>,
    #[serde(default = "one")]
    pub noise_power: f64,
    pub snapshots: usize,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometrySpec {
    Ula { sensors: usize },
    Coprime { p: usize, q: usize },
    Nested { n1: usize, n2: usize },
    Custom { indices: Vec<usize> },
}

impl GeometrySpec {
    pub fn build(&self) -> bifdoa_core::Result<ArrayGeometry> {
        match self {
            GeometrySpec::Ula { sensors } => ArrayGeometry::ula(*sensors),
            GeometrySpec::Coprime { p, q } => ArrayGeometry::coprime(*p, *q),
            GeometrySpec::Nested { n1, n2 } => ArrayGeometry::nested(*n1, *n2),
            GeometrySpec::Custom { indices } => ArrayGeometry::custom(indices.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepSpec {
    /// Sweeps the SNR (dB) of one source, by default the second.
    Snr {
        #[serde(default = "second_source")]
        source_index: usize,
        values: Vec<f64>,
    },
    /// Sweeps the number of snapshots.
    Snapshots { values: Vec<usize> },
    Single,
}

fn second_source() -> usize {
    1
}

impl SweepSpec {
    pub fn name(&self) -> &'static str {
        match self {
            SweepSpec::Snr { .. } => "snr_db",
            SweepSpec::Snapshots { .. } => "snapshots",
            SweepSpec::Single => "single",
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            SweepSpec::Snr { values, .. } => values.clone(),
            SweepSpec::Snapshots { values } => values.iter().map(|&t| t as f64).collect(),
            SweepSpec::Single => vec![0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PipelineSpec {
    /// One-bit comparator plus a `bits`-bit modulo ADC, unwrapped by blind integer forcing.
    OnebitBif { bits: u32 },
    /// Clipping uniform ADC with `bits` bits per I/Q channel.
    Conventional { bits: u32 },
}

impl PipelineSpec {
    pub fn id(&self) -> String {
        match self {
            PipelineSpec::OnebitBif { bits } => format!("onebit_bif_b{bits}"),
            PipelineSpec::Conventional { bits } => format!("conventional_b{bits}"),
        }
    }

    /// Bits per I/Q sample, counting the one-bit channel for the modulo pipeline.
    pub fn total_bits(&self) -> u32 {
        match self {
            PipelineSpec::OnebitBif { bits } => bits + 1,
            PipelineSpec::Conventional { bits } => *bits,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerSpec {
    /// Modulo range as a multiple of the per-channel signal standard deviation.
    #[serde(default = "one")]
    pub modulo_range_scale: f64,
    /// Conventional ADC clipping threshold as a multiple of the same deviation.
    #[serde(default = "four")]
    pub adc_threshold_scale: f64,
    #[serde(default = "max_iters")]
    pub max_iters: usize,
}

fn four() -> f64 {
    4.0
}

fn max_iters() -> usize {
    10
}

impl Default for QuantizerSpec {
    fn default() -> Self {
        QuantizerSpec {
            modulo_range_scale: 1.0,
            adc_threshold_scale: 4.0,
            max_iters: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_tol")]
    pub detection_tol_deg: f64,
    /// Per-trial wall-clock budget in seconds for each pipeline.
    #[serde(default)]
    pub timeout_s: Option<f64>,
    /// Grid step for spectral MUSIC on sparse arrays and for spectrum export.
    #[serde(default = "default_grid")]
    pub grid_step_deg: f64,
    pub scene: SceneSpec,
    pub geometry: GeometrySpec,
    pub sweep: SweepSpec,
    pub pipelines: Vec<PipelineSpec>,
    #[serde(default)]
    pub quantizer: QuantizerSpec,
}

fn default_tol() -> f64 {
    0.1
}

fn default_grid() -> f64 {
    0.01
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        // Check the version first so old files fail with a schema error, not a field error.
        let raw: toml::Value = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
            path: origin.into(),
            message: e.to_string(),
        })?;
        match raw.get("schema_version").and_then(|v| v.as_integer()) {
            Some(v) if v == SCHEMA_VERSION as i64 => {}
            Some(v) => return Err(ConfigError::Schema { found: v.max(0) as u32 }),
            None => {
                return Err(ConfigError::Parse {
                    path: origin.into(),
                    message: "missing integer field `schema_version`".into(),
                })
            }
        }
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.pipelines.is_empty() {
            return bad("at least one pipeline is required".into());
        }
        let mut ids: Vec<String> = self.pipelines.iter().map(|p| p.id()).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate pipeline".into());
        }
        for p in &self.pipelines {
            match *p {
                PipelineSpec::OnebitBif { bits } if !(1..=30).contains(&bits) => {
                    return bad(format!("modulo bits {bits} outside 1..=30"))
                }
                PipelineSpec::Conventional { bits } if !(2..=30).contains(&bits) => {
                    return bad(format!("conventional bits {bits} outside 2..=30"))
                }
                _ => {}
            }
        }
        if !(self.detection_tol_deg > 0.0) {
            return bad("detection_tol_deg must be positive".into());
        }
        if !(self.grid_step_deg > 0.0 && self.grid_step_deg < 10.0) {
            return bad("grid_step_deg must lie in (0, 10)".into());
        }
        if let Some(t) = self.timeout_s {
            if !(t > 0.0) {
                return bad("timeout_s must be positive".into());
            }
        }
        if !(self.quantizer.modulo_range_scale > 0.0 && self.quantizer.adc_threshold_scale > 0.0) {
            return bad("quantizer scales must be positive".into());
        }
        if self.scene.doas_deg.len() != self.scene.snr_db.len() {
            return bad("scene.doas_deg and scene.snr_db differ in length".into());
        }
        match &self.sweep {
            SweepSpec::Snr { source_index, values } => {
                if *source_index >= self.scene.doas_deg.len() {
                    return bad(format!("sweep.source_index {source_index} has no source"));
                }
                check_sorted(values)?;
            }
            SweepSpec::Snapshots { values } => {
                if values.contains(&0) {
                    return bad("snapshot counts must be positive".into());
                }
                check_sorted(&values.iter().map(|&v| v as f64).collect::<Vec<_>>())?;
            }
            SweepSpec::Single => {}
        }
        let geometry = self.geometry.build().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for value in self.sweep.values() {
            let scene = self.scene_at(value).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if geometry.len() <= scene.num_sources() {
                return bad(format!(
                    "{} sensors cannot resolve {} sources",
                    geometry.len(),
                    scene.num_sources()
                ));
            }
        }
        Ok(())
    }

    /// Scene at one sweep point.
    pub fn scene_at(&self, sweep_value: f64) -> bifdoa_core::Result<SourceScene> {
        let mut snr = self.scene.snr_db.clone();
        let mut snapshots = self.scene.snapshots;
        match &self.sweep {
            SweepSpec::Snr { source_index, .. } => snr[*source_index] = sweep_value,
            SweepSpec::Snapshots { .. } => snapshots = sweep_value as usize,
            SweepSpec::Single => {}
        }
        SourceScene::from_snr_db(self.scene.doas_deg.clone(), &snr, self.scene.noise_power, snapshots)
    }
}

fn check_sorted(values: &[f64]) -> Result<(), ConfigError> {
    if values.is_empty() {
        return Err(ConfigError::Invalid("sweep values must not be empty".into()));
    }
    if values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(ConfigError::Invalid("sweep values must be strictly increasing".into()));
    }
    Ok(())
}
