use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{DensityRegime, DEFAULT_SIGMAS};
use crate::error::{Error, Result};
use crate::pipeline::{InferenceConfig, PretrainConfig, RegressTrainConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Impulsive variant: `sigma_fraction` of the diagonal applied to
/// `affected_fraction` of the points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulsiveConfig {
    pub sigma_fraction: f64,
    pub affected_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Gaussian noise levels in percent of the bounding-box diagonal.
    pub sigmas_percent: Vec<f64>,
    pub impulsive: Option<ImpulsiveConfig>,
    pub density: Option<DensityRegime>,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigmas_percent: DEFAULT_SIGMAS.iter().map(|s| s * 100.0).collect(),
            impulsive: None,
            density: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub encoder: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

/// Every tunable of every command in one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub noise: NoiseConfig,
    pub pretrain: PretrainConfig,
    pub train: RegressTrainConfig,
    pub inference: InferenceConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            noise: NoiseConfig::default(),
            pretrain: PretrainConfig::default(),
            train: RegressTrainConfig::default(),
            inference: InferenceConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config schema version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// `"0.25,0.5"` → `[0.25, 0.5]`. The empty string is the empty list.
pub(crate) fn parse_percent_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| match t.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
            _ => Err(Error::Config(format!("bad noise level '{t}'"))),
        })
        .collect()
}

/// `"SIGMA:FRAC"` with sigma in percent and the fraction in `[0, 1]`.
pub(crate) fn parse_impulsive(text: &str) -> Result<ImpulsiveConfig> {
    let bad = || Error::Config(format!("--impulsive expects SIGMA:FRACTION, got '{text}'"));
    let (s, f) = text.split_once(':').ok_or_else(bad)?;
    let sigma: f64 = s.trim().parse().map_err(|_| bad())?;
    let frac: f64 = f.trim().parse().map_err(|_| bad())?;
    if !(sigma >= 0.0 && sigma.is_finite() && (0.0..=1.0).contains(&frac)) {
        return Err(bad());
    }
    Ok(ImpulsiveConfig {
        sigma_fraction: sigma / 100.0,
        affected_fraction: frac,
    })
}
