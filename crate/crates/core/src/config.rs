//! Experiment configuration file: one JSON document bundling every stage's
//! settings plus the global seed, with a stable content hash for
//! reproducibility metadata.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{FilterSpec, SplitSpec};
use crate::error::{PipelineError, Result};
use crate::eval::{ImportanceMode, SplitPlan};
use crate::features::BurstConfig;
use crate::models::{Arch, ModelConfig};
use crate::sequences::SequenceConfig;
use crate::spikes::DetectionConfig;
use crate::synthgen::GenConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Global seed; generation, splitting, and training all derive from it.
    pub seed: u64,
    /// Worker threads for per-recording preprocessing; 0 uses all cores.
    pub jobs: usize,
    pub filter: FilterSpec,
    pub split: SplitSpec,
    pub detection: DetectionConfig,
    pub burst: BurstConfig,
    pub sequence: SequenceConfig,
    pub generator: GenConfig,
    pub wells_per_class: usize,
    pub model: ModelConfig,
    pub plan: SplitPlan,
    pub importance_mode: ImportanceMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            jobs: 0,
            filter: FilterSpec::default(),
            split: SplitSpec::default(),
            // Experiment-level detection overrides for filtered data: the
            // bandpassed wide template rings past 1 ms and its peak arrives
            // ~1.5 ms after the crossing (causal group delay). A 1 ms dead
            // time double-counts such spikes and a 1 ms search window centers
            // them on an early lobe. 3 ms dead time matches the generator
            // refractory, so distinct spikes are never merged.
            detection: DetectionConfig {
                dead_time_s: 0.003,
                peak_search_window_s: 0.002,
                ..DetectionConfig::default()
            },
            burst: BurstConfig::default(),
            sequence: SequenceConfig::default(),
            generator: GenConfig::default(),
            wells_per_class: 2,
            model: ModelConfig::new(Arch::Lstm, 103),
            plan: SplitPlan::default(),
            importance_mode: ImportanceMode::RetrainAblation,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(s).map_err(|e| PipelineError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_json_str(&s)
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.detection.validate()?;
        self.burst.validate()?;
        self.sequence.validate()?;
        self.generator.validate()?;
        self.model.validate()?;
        self.plan.validate()?;
        if self.wells_per_class == 0 {
            return Err(PipelineError::Config("wells_per_class must be >= 1".into()));
        }
        Ok(())
    }

    /// Short content hash over the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialization");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..6])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = ExperimentConfig::default();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back = ExperimentConfig::from_json_str(&json).unwrap();
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg = ExperimentConfig::from_json_str(r#"{"seed": 7}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.split.window_s, 10.0);
    }

    #[test]
    fn hash_changes_with_content() {
        let a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(ExperimentConfig::from_json_str(r#"{"wells_per_class": 0}"#).is_err());
        assert!(ExperimentConfig::from_json_str("not json").is_err());
    }
}
