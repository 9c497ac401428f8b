//! Flat key-value configuration file mirroring the stage and training fields.
//!
//! ```toml
//! tau = 0.85
//! epochs = 10
//! seed = 7
//! ```
//!
//! Absent keys keep their defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedspace::MeanDistance;
use crate::error::{Error, Result};
use crate::pipeline::StageConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub accept_threshold: Option<f64>,
    pub bird_min_species: Option<usize>,
    pub bird_min_sum: Option<f64>,
    pub min_cluster_size: Option<usize>,
    pub centroid_percentile: Option<f64>,
    pub tau: Option<f64>,
    pub mean_distance: Option<MeanDistance>,
    pub margin: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub seed: Option<u64>,
    pub triplets_per_epoch: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub output_dim: Option<usize>,
}

macro_rules! apply {
    ($src:expr, $dst:expr, $($field:ident),*) => {
        $(if let Some(v) = $src.$field { $dst.$field = v; })*
    };
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Overlays the present keys onto `base` and validates the result.
    pub fn apply(&self, base: StageConfig) -> Result<StageConfig> {
        let mut cfg = base;
        apply!(
            self,
            cfg,
            accept_threshold,
            bird_min_species,
            bird_min_sum,
            min_cluster_size,
            centroid_percentile,
            tau,
            mean_distance
        );
        apply!(
            self,
            cfg.train,
            margin,
            epochs,
            batch_size,
            learning_rate,
            seed,
            triplets_per_epoch,
            hidden_dim,
            output_dim
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Defaults overlaid with the file at `path`, if any.
pub fn load_stage_config(path: Option<&Path>) -> Result<StageConfig> {
    match path {
        Some(p) => ConfigFile::load(p)?.apply(StageConfig::default()),
        None => Ok(StageConfig::default()),
    }
}
