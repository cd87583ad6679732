//! The single TOML document driving every subcommand. Every table and key is
//! optional; missing entries take the library defaults.

use std::path::Path;

use lidarloc_core::dataset::DatasetConfig;
use lidarloc_core::synth::SynthConfig;
use lidarloc_nets::train::{ClassifierTrainConfig, RegressorTrainConfig, TranslatorTrainConfig};
use lidarloc_nets::{ClassifierSpec, Direction, DiscriminatorSpec, GeneratorSpec, RegressorSpec};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, PipelineError, Result};

/// Bumped together with the dataset format.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub format_version: u32,
    pub synth: SynthConfig,
    pub dataset: DatasetConfig,
    pub classifier: ClassifierStage,
    pub translator: TranslatorStage,
    pub regressor: RegressorStage,
    pub evaluate: EvaluateStage,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            format_version: CONFIG_VERSION,
            synth: SynthConfig::default(),
            dataset: DatasetConfig::default(),
            classifier: ClassifierStage::default(),
            translator: TranslatorStage::default(),
            regressor: RegressorStage::default(),
            evaluate: EvaluateStage::default(),
        }
    }
}

/// `spec.input_size` and `spec.num_classes` are taken from the dataset at
/// training time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierStage {
    pub spec: ClassifierSpec,
    pub train: ClassifierTrainConfig,
    /// Evenly spaced subset of each scene's train split.
    pub max_train_per_scene: Option<usize>,
    pub max_val_per_scene: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslatorStage {
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub train: TranslatorTrainConfig,
    pub direction: Direction,
    /// Train pairs drawn evenly across all scenes.
    pub max_pairs: Option<usize>,
    pub max_val_pairs: Option<usize>,
}

impl Default for TranslatorStage {
    fn default() -> Self {
        Self {
            generator: GeneratorSpec::default(),
            discriminator: DiscriminatorSpec::default(),
            train: TranslatorTrainConfig::default(),
            direction: Direction::RgbToPointcloud,
            max_pairs: None,
            max_val_pairs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressorStage {
    pub spec: RegressorSpec,
    pub train: RegressorTrainConfig,
    pub max_train: Option<usize>,
    pub max_val: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateStage {
    pub max_test_per_scene: Option<usize>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let config: Config = toml::from_str(&text).map_err(|e| PipelineError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        config.validate().map_err(|e| PipelineError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(config)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_VERSION {
            return Err(PipelineError::Invalid(format!(
                "format_version {} is not supported (expected {CONFIG_VERSION})",
                self.format_version
            )));
        }
        self.synth.validate()?;
        self.dataset.split.validate()?;
        self.classifier.spec.validate()?;
        self.translator.generator.validate()?;
        self.translator.discriminator.validate()?;
        self.regressor.spec.validate()?;
        self.regressor.train.loss.validate()?;
        self.regressor.train.augment.validate()?;
        for (name, v) in [
            (
                "classifier.max_train_per_scene",
                self.classifier.max_train_per_scene,
            ),
            (
                "classifier.max_val_per_scene",
                self.classifier.max_val_per_scene,
            ),
            ("translator.max_pairs", self.translator.max_pairs),
            ("translator.max_val_pairs", self.translator.max_val_pairs),
            ("regressor.max_train", self.regressor.max_train),
            ("regressor.max_val", self.regressor.max_val),
            (
                "evaluate.max_test_per_scene",
                self.evaluate.max_test_per_scene,
            ),
        ] {
            if v == Some(0) {
                return Err(PipelineError::Invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Up to `max` items spread evenly over `items`, order preserved.
pub fn evenly_spaced<T: Clone>(items: &[T], max: Option<usize>) -> Vec<T> {
    match max {
        Some(m) if m < items.len() => (0..m).map(|i| items[i * items.len() / m].clone()).collect(),
        _ => items.to_vec(),
    }
}
