//! Pipeline configuration: one JSON file with per-stage sections that mirror
//! each module's config type, plus a global master seed. Every field has a
//! default so a missing config file still runs a sensible small pipeline;
//! section seeds of 0 are replaced by values derived from the master seed.

use serde::{Deserialize, Serialize};

use crate::cleaning::CleaningConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricsConfig;
use crate::noise::NoiseConfig;
use crate::rng::StreamKey;
use crate::synth::SynthConfig;
use crate::tokenizer;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSection {
    /// How many scenarios to synthesize.
    #[serde(default = "default_scenario_count")]
    pub scenario_count: usize,
    /// Fraction of scenarios generated with wave_mode on.
    #[serde(default = "default_wave_fraction")]
    pub wave_fraction: f64,
    #[serde(default = "default_split_ratios")]
    pub split_ratios: (f64, f64, f64),
    /// Interpolated points inserted per map segment when writing the corpus.
    #[serde(default = "default_densify")]
    pub densify_points: usize,
    #[serde(flatten)]
    pub base: SynthConfig,
}

fn default_scenario_count() -> usize {
    200
}
fn default_wave_fraction() -> f64 {
    0.5
}
fn default_split_ratios() -> (f64, f64, f64) {
    (0.8, 0.1, 0.1)
}
fn default_densify() -> usize {
    10
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            scenario_count: default_scenario_count(),
            wave_fraction: default_wave_fraction(),
            split_ratios: default_split_ratios(),
            densify_points: default_densify(),
            base: SynthConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizerSection {
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_w_h")]
    pub w_h: f64,
    #[serde(default = "default_token_period")]
    pub token_period: f64,
    /// Cap on deltas fed to the vocab builder; larger pools are subsampled
    /// deterministically.
    #[serde(default = "default_max_build_deltas")]
    pub max_build_deltas: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_vocab_size() -> usize {
    tokenizer::DEFAULT_VOCAB_SIZE
}
fn default_epsilon() -> f64 {
    tokenizer::DEFAULT_EPSILON
}
fn default_w_h() -> f64 {
    tokenizer::DEFAULT_HEADING_WEIGHT
}
fn default_token_period() -> f64 {
    tokenizer::DEFAULT_TOKEN_PERIOD
}
fn default_max_build_deltas() -> usize {
    200_000
}

impl Default for TokenizerSection {
    fn default() -> Self {
        TokenizerSection {
            vocab_size: default_vocab_size(),
            epsilon: default_epsilon(),
            w_h: default_w_h(),
            token_period: default_token_period(),
            max_build_deltas: default_max_build_deltas(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub cleaning: CleaningConfig,
    #[serde(default)]
    pub tokenizer: TokenizerSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

impl PipelineConfig {
    pub fn load(path: &std::path::Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::BadConfig {
                detail: format!("{}: {}", path.display(), e),
            })?;
        cfg.derive_section_seeds();
        Ok(cfg)
    }

    /// Fill zero section seeds from the master seed.
    pub fn derive_section_seeds(&mut self) {
        if self.synth.base.seed == 0 {
            self.synth.base.seed = StreamKey::new(self.seed).with_str("synth").value();
        }
        if self.noise.seed == 0 {
            self.noise.seed = StreamKey::new(self.seed).with_str("noise").value();
        }
        if self.tokenizer.seed == 0 {
            self.tokenizer.seed = StreamKey::new(self.seed).with_str("tokenizer").value();
        }
        if self.train.seed == 0 {
            self.train.seed = StreamKey::new(self.seed).with_str("train").value();
        }
    }

    pub fn with_master_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.base.seed = 0;
        self.noise.seed = 0;
        self.tokenizer.seed = 0;
        self.train.seed = 0;
        self.derive_section_seeds();
        self
    }
}
