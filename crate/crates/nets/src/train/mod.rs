//! Training loops for the three stages plus evaluation helpers.

mod classifier;
mod eval;
mod metrics;
mod regressor;
mod translator;

pub use classifier::{train_classifier, ClassifierRun, ClassifierTrainConfig};
pub use eval::{confusion_matrix, error_table, ConfusionMatrix, ErrorTable, SceneModels};
pub use metrics::{MetricLog, MetricRecord, Phase};
pub use regressor::{
    pose_loss_batch, train_regressor, InputAugment, PoseLossParts, RegressorRun,
    RegressorTrainConfig,
};
pub use translator::{
    patch_accuracy, train_discriminator, train_translator, translate, TranslatorRun,
    TranslatorTrainConfig,
};

use candle_core::{Device, Tensor};
use candle_nn::{AdamW, ParamsAdamW};
use lidarloc_core::synth::SamplePair;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::convert::{images_to_tensor, ValueRange};
use crate::{Direction, NetError, Result};

/// Adam hyperparameters (no weight decay).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// The learning rate follows a half cosine from `lr` to
    /// `lr * final_lr_fraction` over the run; 1 keeps it constant.
    pub final_lr_fraction: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            final_lr_fraction: 1.0,
        }
    }
}

impl OptimConfig {
    /// Settings for the adversarial stage.
    pub fn gan() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            ..Self::default()
        }
    }

    /// Settings for pose regression: a higher peak rate decayed to 2 %.
    pub fn regressor() -> Self {
        Self {
            lr: 2e-3,
            final_lr_fraction: 0.02,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && (0.0..=1.0).contains(&self.final_lr_fraction);
        if !ok {
            return Err(NetError::Config(format!(
                "invalid optimizer settings {self:?}"
            )));
        }
        Ok(())
    }

    /// Learning rate for update `step` (1-based) of `total`.
    pub fn lr_at(&self, step: u64, total: u64) -> f64 {
        if total <= 1 {
            return self.lr;
        }
        let t = (step.clamp(1, total) - 1) as f64 / (total - 1) as f64;
        let floor = self.lr * self.final_lr_fraction;
        floor + (self.lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }

    pub(crate) fn build(&self, vars: Vec<candle_core::Var>) -> Result<AdamW> {
        self.validate()?;
        let params = ParamsAdamW {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: 0.0,
        };
        let mut opt = AdamW::new_lr(vars, self.lr)?;
        opt.set_params(params);
        Ok(opt)
    }
}

/// RGB images with scene labels, unit range.
#[derive(Debug, Clone)]
pub struct LabeledImages {
    pub images: Tensor,
    pub labels: Vec<u32>,
}

impl LabeledImages {
    pub fn from_samples(samples: &[SamplePair]) -> Result<Self> {
        let imgs: Vec<_> = samples.iter().map(|s| &s.rgb).collect();
        Ok(Self {
            images: images_to_tensor(&imgs, ValueRange::Unit)?,
            labels: samples.iter().map(|s| s.scene_id as u32).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Point-cloud images (unit range) with normalized 7-vector pose targets.
#[derive(Debug, Clone)]
pub struct PoseImages {
    pub images: Tensor,
    pub targets: Vec<[f64; 7]>,
}

impl PoseImages {
    pub fn from_samples(samples: &[SamplePair]) -> Result<Self> {
        let imgs: Vec<_> = samples.iter().map(|s| &s.pointcloud).collect();
        Ok(Self {
            images: images_to_tensor(&imgs, ValueRange::Unit)?,
            targets: samples.iter().map(|s| s.pose.to_vector().0).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Paired source and target images in the signed range.
#[derive(Debug, Clone)]
pub struct ImagePairs {
    pub source: Tensor,
    pub target: Tensor,
}

impl ImagePairs {
    pub fn from_samples(samples: &[SamplePair], direction: Direction) -> Result<Self> {
        let rgb: Vec<_> = samples.iter().map(|s| &s.rgb).collect();
        let pc: Vec<_> = samples.iter().map(|s| &s.pointcloud).collect();
        let (src, tgt) = match direction {
            Direction::RgbToPointcloud => (rgb, pc),
            Direction::PointcloudToRgb => (pc, rgb),
        };
        Self::new(
            images_to_tensor(&src, ValueRange::Signed)?,
            images_to_tensor(&tgt, ValueRange::Signed)?,
        )
    }

    pub fn new(source: Tensor, target: Tensor) -> Result<Self> {
        if source.dims() != target.dims() {
            return Err(NetError::Data(format!(
                "unpaired data: {:?} vs {:?}",
                source.dims(),
                target.dims()
            )));
        }
        Ok(Self { source, target })
    }

    pub fn len(&self) -> usize {
        self.source.dim(0).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) fn rows(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let idx: Vec<u32> = idx.iter().map(|&i| i as u32).collect();
    let n = idx.len();
    Ok(t.index_select(&Tensor::from_vec(idx, n, &Device::Cpu)?, 0)?)
}

/// Shuffled mini-batches of `0..n`; the last batch may be short.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Consecutive index chunks for inference.
pub(crate) fn chunks(n: usize, size: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n)
        .step_by(size)
        .map(move |s| (s..(s + size).min(n)).collect())
}

pub(crate) const EVAL_CHUNK: usize = 64;

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

pub(crate) fn check_finite(stage: &'static str, step: u64, values: &[(&str, f64)]) -> Result<()> {
    match values.iter().find(|(_, v)| !v.is_finite()) {
        Some((name, value)) => Err(NetError::Diverged {
            stage,
            step,
            name: name.to_string(),
            value: *value,
        }),
        None => Ok(()),
    }
}

pub(crate) fn check_positive(what: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(NetError::Config(format!("{what} must be positive")));
    }
    Ok(())
}
