use std::path::Path;

use anyhow::Context;
use posetrack::builder::{FeatureSet, TrainConfig};
use posetrack::eval::{Assignment, DEFAULT_ALPHA};
use posetrack::pipeline::SequenceConfig;
use posetrack::synth::SynthConfig;
use posetrack::Error;
use serde::Deserialize;

/// Contents of a `--config` TOML file. Unknown keys are rejected at every
/// level.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub tracking: SequenceConfig,
    pub synth: SynthConfig,
    pub training: TrainingSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    /// Comma-separated subset of `l2`, `sift`, `dm`.
    pub features: String,
    pub l2: f64,
    pub steps: usize,
    pub lr: f64,
    pub region_side: f64,
    /// Temporal gate used when collecting training pairs, in pixels.
    pub temporal_gate: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            features: FeatureSet::ALL.label(),
            l2: TrainConfig::default().l2,
            steps: TrainConfig::default().steps,
            lr: TrainConfig::default().lr,
            region_side: 64.0,
            temporal_gate: 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub alpha: f64,
    pub assignment: Assignment,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            alpha: DEFAULT_ALPHA,
            assignment: Assignment::Greedy,
        }
    }
}

impl TrainingSection {
    pub fn optimizer(&self) -> TrainConfig {
        TrainConfig {
            l2: self.l2,
            steps: self.steps,
            lr: self.lr,
        }
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: FileConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.tracking.validate()?;
        cfg.synth.validate()?;
        FeatureSet::parse(&cfg.training.features)?;
        if cfg.eval.alpha.is_nan() || cfg.eval.alpha <= 0.0 {
            return Err(Error::Config(format!(
                "eval.alpha must be positive, got {}",
                cfg.eval.alpha
            ))
            .into());
        }
        Ok(cfg)
    }
}
