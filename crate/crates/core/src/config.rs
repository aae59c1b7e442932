//! TOML run configuration. Every section is optional; unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::association::AssocConfig;
use crate::degeneracy::DegeneracyConfig;
use crate::features::FeatureConfig;
use crate::residuals::{NoiseModel, RobustLoss};
use crate::selector::SelectorConfig;
use crate::solver::SolverConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    None,
    #[default]
    Huber,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub sigma: f64,
    pub loss: LossKind,
    /// Threshold on the whitened residual norm.
    pub huber_delta: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma: 0.02,
            loss: LossKind::Huber,
            huber_delta: 0.1,
        }
    }
}

impl NoiseConfig {
    pub fn model(&self) -> Result<NoiseModel, ConfigError> {
        let loss = match self.loss {
            LossKind::None => RobustLoss::None,
            LossKind::Huber => RobustLoss::Huber {
                delta: self.huber_delta,
            },
        };
        if !(self.sigma > 0.0) {
            return Err(ConfigError::Invalid("noise.sigma must be positive".into()));
        }
        NoiseModel::isotropic(self.sigma, loss).map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    /// Stochastic-greedy good-feature selection.
    #[default]
    Gf,
    /// Greedy over the full pool each round.
    Greedy,
    Rnd,
    Full,
}

impl std::str::FromStr for SelectionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gf" => Ok(Self::Gf),
            "greedy" => Ok(Self::Greedy),
            "rnd" => Ok(Self::Rnd),
            "full" => Ok(Self::Full),
            other => Err(format!("unknown mode '{other}' (expected gf, greedy, rnd or full)")),
        }
    }
}

impl std::fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gf => "gf",
            Self::Greedy => "greedy",
            Self::Rnd => "rnd",
            Self::Full => "full",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub mode: SelectionMode,
    pub keyframe_translation: f64,
    /// Radians.
    pub keyframe_rotation: f64,
    /// Association passes per frame; passes after the first re-associate
    /// only the features used by the previous solve.
    pub match_rounds: usize,
    /// Map voxel sizes; 0 stores points verbatim.
    pub map_voxel_edge: f64,
    pub map_voxel_planar: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: SelectionMode::Gf,
            keyframe_translation: 0.3,
            keyframe_rotation: 5f64.to_radians(),
            match_rounds: 3,
            map_voxel_edge: 0.2,
            map_voxel_planar: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub features: FeatureConfig,
    pub assoc: AssocConfig,
    pub noise: NoiseConfig,
    pub selector: SelectorConfig,
    pub degeneracy: DegeneracyConfig,
    pub solver: SolverConfig,
    pub pipeline: PipelineConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        self.features.validate().map_err(|e| invalid(e.to_string()))?;
        if self.assoc.k < 3 || !(self.assoc.max_dist > 0.0) || !(self.assoc.planarity > 0.0) || !(self.assoc.linearity_ratio >= 1.0) {
            return Err(invalid("assoc: need k >= 3, positive max_dist and planarity, linearity_ratio >= 1".into()));
        }
        self.noise.model()?;
        self.selector.validate().map_err(|e| invalid(e.to_string()))?;
        self.degeneracy.validate().map_err(invalid)?;
        self.solver.validate().map_err(invalid)?;
        let p = &self.pipeline;
        if !(p.keyframe_translation >= 0.0 && p.keyframe_rotation >= 0.0 && p.map_voxel_edge >= 0.0 && p.map_voxel_planar >= 0.0)
            || p.match_rounds == 0
        {
            return Err(invalid("pipeline: thresholds and voxel sizes must be >= 0 and match_rounds >= 1".into()));
        }
        Ok(())
    }
}
