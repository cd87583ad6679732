use candle_core::{DType, Device, Tensor, D};
use candle_nn::Optimizer;
use lidarloc_core::geometry::PoseLossSpec;
use lidarloc_core::synth::mix_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_finite, check_positive, chunks, epoch_batches, rows, scalar, MetricLog, OptimConfig,
    Phase, PoseImages, EVAL_CHUNK,
};
use crate::layers::box_blur3;
use crate::{NetError, Regressor, Result};

const STAGE: &str = "regressor";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub loss: PoseLossSpec,
    pub augment: InputAugment,
    pub seed: u64,
}

/// Random corruption of training inputs (never of validation inputs).
/// All zero disables it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct InputAugment {
    /// Amplitude of uniform per-value noise, in unit image range.
    pub noise: f64,
    /// Fraction of pixels blacked out.
    pub dropout: f64,
    /// Probability that a sample is box-filtered once.
    pub blur: f64,
}

impl InputAugment {
    pub fn validate(&self) -> Result<()> {
        let ok = self.noise >= 0.0
            && (0.0..=1.0).contains(&self.dropout)
            && (0.0..=1.0).contains(&self.blur);
        if !ok {
            return Err(NetError::Config(format!("invalid augmentation {self:?}")));
        }
        Ok(())
    }

    fn is_off(&self) -> bool {
        self.noise == 0.0 && self.dropout == 0.0 && self.blur == 0.0
    }

    /// Corrupts a `(B, C, H, W)` batch in `[0, 1]`; the result is clamped
    /// back to that range.
    pub fn apply(&self, x: &Tensor, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        if self.is_off() {
            return Ok(x.clone());
        }
        let (b, c, h, w) = x.dims4()?;
        let dev = x.device();
        let mut x = x.clone();
        if self.blur > 0.0 {
            let pick: Vec<f32> = (0..b)
                .map(|_| (rng.random::<f64>() < self.blur) as u8 as f32)
                .collect();
            let pick = Tensor::from_vec(pick, (b, 1, 1, 1), dev)?;
            let blurred = box_blur3(&x)?;
            x = (x.broadcast_mul(&(1.0 - &pick)?)? + blurred.broadcast_mul(&pick)?)?;
        }
        if self.dropout > 0.0 {
            let keep: Vec<f32> = (0..b * h * w)
                .map(|_| (rng.random::<f64>() >= self.dropout) as u8 as f32)
                .collect();
            x = x.broadcast_mul(&Tensor::from_vec(keep, (b, 1, h, w), dev)?)?;
        }
        if self.noise > 0.0 {
            let a = self.noise as f32;
            let noise: Vec<f32> = (0..b * c * h * w)
                .map(|_| rng.random_range(-a..=a))
                .collect();
            x = (x + Tensor::from_vec(noise, (b, c, h, w), dev)?)?;
        }
        Ok(x.clamp(0.0f32, 1.0f32)?)
    }
}

impl Default for RegressorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 70,
            batch_size: 32,
            optim: OptimConfig::regressor(),
            loss: PoseLossSpec::default(),
            augment: InputAugment::default(),
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct RegressorRun {
    /// Parameters of the epoch with the lowest validation loss (the final
    /// ones without validation data).
    pub model: Regressor,
    pub log: MetricLog,
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub steps: u64,
}

/// Batch means of the two loss terms and of their weighted sum.
pub struct PoseLossParts {
    pub total: Tensor,
    pub position: Tensor,
    pub orientation: Tensor,
}

/// Batch-mean pose loss `|P - P̂| + |Q̂ - Q/|Q|| / β` for raw predictions
/// `(B, 7)`; only the target quaternion is normalized.
pub fn pose_loss_batch(pred: &Tensor, target: &Tensor, beta: f64) -> Result<PoseLossParts> {
    let target = target.to_dtype(pred.dtype())?;
    let tq = target.narrow(1, 3, 4)?;
    let tq = tq.broadcast_div(&tq.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?)?;
    let position = (pred.narrow(1, 0, 3)? - target.narrow(1, 0, 3)?)?
        .sqr()?
        .sum(D::Minus1)?
        .sqrt()?;
    let orientation = (pred.narrow(1, 3, 4)? - tq)?
        .sqr()?
        .sum(D::Minus1)?
        .sqrt()?;
    let total = (&position + (&orientation / beta)?)?.mean_all()?;
    Ok(PoseLossParts {
        total,
        position: position.mean_all()?,
        orientation: orientation.mean_all()?,
    })
}

fn targets_tensor(targets: &[[f64; 7]], idx: &[usize]) -> Result<Tensor> {
    let flat: Vec<f32> = idx
        .iter()
        .flat_map(|&i| targets[i].map(|v| v as f32))
        .collect();
    Ok(Tensor::from_vec(flat, (idx.len(), 7), &Device::Cpu)?)
}

/// Mean loss terms over a data set in evaluation mode: `(loss, position,
/// orientation)`.
pub(crate) fn evaluate(model: &Regressor, data: &PoseImages, beta: f64) -> Result<(f64, f64, f64)> {
    let mut sums = [0.0; 3];
    for idx in chunks(data.len(), EVAL_CHUNK) {
        let pred = model
            .forward(&rows(&data.images, &idx)?)?
            .to_dtype(DType::F64)?;
        let target = targets_tensor(&data.targets, &idx)?.to_dtype(DType::F64)?;
        let parts = pose_loss_batch(&pred, &target, beta)?;
        let w = idx.len() as f64;
        sums[0] += scalar(&parts.total)? * w;
        sums[1] += scalar(&parts.position)? * w;
        sums[2] += scalar(&parts.orientation)? * w;
    }
    let n = data.len() as f64;
    Ok((sums[0] / n, sums[1] / n, sums[2] / n))
}

/// Minimizes the pose loss on point-cloud images of one scene, validating
/// after every epoch (and once before training) and keeping the parameters
/// with the lowest validation loss.
pub fn train_regressor(
    model: Regressor,
    train: &PoseImages,
    val: Option<&PoseImages>,
    config: &RegressorTrainConfig,
) -> Result<RegressorRun> {
    check_positive("batch size", config.batch_size)?;
    config.loss.validate()?;
    config.augment.validate()?;
    if train.is_empty() {
        return Err(NetError::Data("no training samples for this scene".into()));
    }
    let beta = config.loss.beta;
    let val = val.filter(|v| !v.is_empty());
    let mut opt = config.optim.build(model.params().vars().to_vec())?;
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
    let mut corrupt = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 1));
    let mut log = MetricLog::new();
    let mut step = 0u64;
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut validate =
        |model: &Regressor, log: &mut MetricLog, epoch: usize, step: u64| -> Result<()> {
            if let Some(v) = val {
                let (loss, position, orientation) = evaluate(model, v, beta)?;
                log.record(
                    STAGE,
                    Phase::Val,
                    step,
                    Some(epoch),
                    &[
                        ("loss", loss),
                        ("position", position),
                        ("orientation", orientation),
                    ],
                )?;
                if best.as_ref().is_none_or(|b| loss < b.0) {
                    best = Some((loss, epoch, model.params().snapshot()?));
                }
            }
            Ok(())
        };
    validate(&model, &mut log, 0, step)?;
    let total = (config.epochs * train.len().div_ceil(config.batch_size)) as u64;
    for epoch in 1..=config.epochs {
        for idx in epoch_batches(train.len(), config.batch_size, &mut shuffle) {
            step += 1;
            let pred = model.forward(
                &config
                    .augment
                    .apply(&rows(&train.images, &idx)?, &mut corrupt)?,
            )?;
            let target = targets_tensor(&train.targets, &idx)?;
            let parts = pose_loss_batch(&pred, &target, beta)?;
            // logged in f64 so the terms recombine exactly
            let logged = pose_loss_batch(
                &pred.detach().to_dtype(DType::F64)?,
                &target.to_dtype(DType::F64)?,
                beta,
            )?;
            let values = [
                ("loss", scalar(&logged.total)?),
                ("position", scalar(&logged.position)?),
                ("orientation", scalar(&logged.orientation)?),
            ];
            check_finite(STAGE, step, &values)?;
            opt.set_learning_rate(config.optim.lr_at(step, total));
            opt.backward_step(&parts.total)?;
            log.record(STAGE, Phase::Train, step, Some(epoch), &values)?;
        }
        validate(&model, &mut log, epoch, step)?;
    }
    let (best_val_loss, best_epoch) = match best {
        Some((loss, epoch, values)) => {
            model.params().restore(&values)?;
            (Some(loss), epoch)
        }
        None => (None, config.epochs),
    };
    Ok(RegressorRun {
        model,
        log,
        best_epoch,
        best_val_loss,
        steps: step,
    })
}
