//! Pipeline configuration file.
//!
//! One JSON document with a section per module. Missing keys take their
//! defaults, unknown keys are rejected, and every section is validated on
//! load. Command-line flags override file values, which override defaults.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::evaluation::MtwvConfig;
use crate::features::FeatureConfig;
use crate::retrieval::{IndexConfig, SearchConfig};
use crate::training::TrainingConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; `None` uses the available parallelism.
    pub threads: Option<usize>,
    pub sample_rate: u32,
    pub features: FeatureConfig,
    pub augment: AugmentConfig,
    pub training: TrainingConfig,
    pub index: IndexConfig,
    pub search: SearchConfig,
    pub mtwv: MtwvConfig,
    /// Archive segment length and hop, seconds.
    pub segment_length: f64,
    pub segment_hop: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            threads: None,
            sample_rate: 16_000,
            features: FeatureConfig::default(),
            augment: AugmentConfig::default(),
            training: TrainingConfig::default(),
            index: IndexConfig::default(),
            search: SearchConfig::default(),
            mtwv: MtwvConfig::default(),
            segment_length: 1.0,
            segment_hop: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = serde_json::from_slice(&raw)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The file's contents, or defaults when no file is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.augment.validate()?;
        self.training.validate()?;
        self.index.validate()?;
        self.mtwv.validate()?;
        let s = &self.search;
        if s.nprobe == 0 || s.n1 == 0 || s.n2 == 0 || s.n3 == 0 {
            return Err(Error::Config("search fan-outs and nprobe must be positive".into()));
        }
        if !(s.n3 <= s.n2 && s.n2 <= s.n1) {
            return Err(Error::Config(format!(
                "stage fan-outs must shrink: n1 {} ≥ n2 {} ≥ n3 {}",
                s.n1, s.n2, s.n3
            )));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if !(self.segment_hop > 0.0 && self.segment_hop <= self.segment_length) {
            return Err(Error::Config("need 0 < segment_hop ≤ segment_length".into()));
        }
        Ok(())
    }
}
