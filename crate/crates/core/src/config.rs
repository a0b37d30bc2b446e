//! The single JSON configuration shared by every command.
//!
//! Every section has defaults, so `{}` is a valid file. Unknown keys are
//! rejected with the path to the offending key.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::encoder::EncoderConfig;
use crate::error::Result;
use crate::eval::{EmbeddingKind, EvalOptions};
use crate::io;
use crate::sampling::SamplerConfig;
use crate::synth::SynthConfig;
use crate::training::{FinetuneConfig, PretrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub folds: usize,
    pub threshold: f64,
    pub exclusion_band: Option<(f64, f64)>,
    pub embedding: EmbeddingKind,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let o = EvalOptions::default();
        Self { folds: 5, threshold: o.threshold, exclusion_band: o.exclusion_band, embedding: EmbeddingKind::Encoder }
    }
}

impl EvalConfig {
    pub fn options(&self) -> EvalOptions {
        EvalOptions { threshold: self.threshold, exclusion_band: self.exclusion_band }
    }
}

/// Settings for held-out experiments and ablations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Training seeds; reported values are medians over them.
    pub seeds: Vec<u64>,
    /// Subjects held out from both pretraining and probe training.
    pub test_subjects: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2], test_subjects: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub synth: SynthConfig,
    pub sampler: SamplerConfig,
    pub encoder: EncoderConfig,
    pub augment: AugmentConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub eval: EvalConfig,
    pub experiment: ExperimentConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: SynthConfig::default(),
            sampler: SamplerConfig::default(),
            encoder: EncoderConfig::default(),
            augment: AugmentConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            eval: EvalConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl Config {
    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = io::read_json(path)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = io::from_json_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.sampler.validate()?;
        self.encoder.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        Ok(())
    }

    /// Seed after applying the `CURL_SEED` override.
    pub fn effective_seed(&self) -> u64 {
        crate::rng::env_seed().unwrap_or(self.seed)
    }

    /// Small end-to-end setting: 20 subjects of 4 minutes, 16 × 32 × 32
    /// clips, a two-block encoder of width 32.
    pub fn desk_experiment() -> Self {
        Self {
            synth: SynthConfig { n_subjects: 20, duration_s: 240.0, ..Default::default() },
            sampler: SamplerConfig { target_fps: 3.2, ..Default::default() },
            encoder: EncoderConfig {
                input: [16, 32, 32],
                patch: [2, 8, 8],
                embed_dim: 32,
                depth: 2,
                heads: 4,
                ..EncoderConfig::default()
            },
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn empty_object_is_default() {
        assert_eq!(Config::from_json("{}").unwrap(), Config::default());
    }

    #[test]
    fn unknown_key_names_its_path() {
        let err = Config::from_json(r#"{"pretrain": {"lr": 0.1, "bogus": 1}}"#).unwrap_err();
        match err {
            Error::Schema { location, .. } => assert!(location.contains("pretrain"), "{location}"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn round_trips_through_json() {
        let c = Config::desk_experiment();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(Config::from_json(&s).unwrap(), c);
    }

    #[test]
    fn eval_section_parses() {
        let c = Config::from_json(r#"{"eval": {"folds": 3, "threshold": 0.4, "exclusion_band": [0.0, 1.0]}}"#).unwrap();
        assert_eq!(c.eval.folds, 3);
        assert_eq!(c.eval.options().exclusion_band, Some((0.0, 1.0)));
    }

    #[test]
    fn invalid_sections_are_config_errors() {
        let e = Config::from_json(r#"{"encoder": {"input": [15, 64, 64]}}"#).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }
}
