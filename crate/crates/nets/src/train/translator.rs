use candle_core::Tensor;
use candle_nn::Optimizer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_finite, check_positive, chunks, epoch_batches, rows, scalar, ImagePairs, MetricLog,
    OptimConfig, Phase, EVAL_CHUNK,
};
use crate::layers::{bce_with_logits, l1};
use crate::{Discriminator, Generator, NetError, Result};

const STAGE: &str = "translator";
const DISC_STAGE: &str = "discriminator";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranslatorTrainConfig {
    /// Generator updates; each is preceded by one discriminator update.
    pub steps: u64,
    pub batch_size: usize,
    pub optim: OptimConfig,
    /// Weight of the L1 reconstruction term.
    pub lambda_l1: f64,
    pub seed: u64,
    /// Training metrics are logged every this many steps.
    pub log_every: u64,
    /// Held-out L1 is evaluated every this many steps.
    pub eval_every: u64,
}

impl Default for TranslatorTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            optim: OptimConfig::gan(),
            lambda_l1: 100.0,
            seed: 0,
            log_every: 10,
            eval_every: 250,
        }
    }
}

impl TranslatorTrainConfig {
    fn validate(&self) -> Result<()> {
        check_positive("batch size", self.batch_size)?;
        check_positive("log interval", self.log_every as usize)?;
        check_positive("eval interval", self.eval_every as usize)?;
        if !(self.lambda_l1 >= 0.0) {
            return Err(NetError::Config(format!(
                "lambda_l1 {} must be non-negative",
                self.lambda_l1
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct TranslatorRun {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub log: MetricLog,
    /// Held-out mean absolute error (signed range) before training.
    pub initial_val_l1: Option<f64>,
    pub final_val_l1: Option<f64>,
    pub steps: u64,
}

/// Generator output for a whole set, in chunks.
pub fn translate(generator: &Generator, source: &Tensor) -> Result<Tensor> {
    let n = source.dim(0)?;
    let parts = chunks(n, EVAL_CHUNK)
        .map(|idx| generator.forward(&rows(source, &idx)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::cat(&parts, 0)?)
}

fn held_out_l1(generator: &Generator, data: &ImagePairs) -> Result<f64> {
    let mut sum = 0.0;
    for idx in chunks(data.len(), EVAL_CHUNK) {
        let fake = generator.forward(&rows(&data.source, &idx)?)?;
        sum += scalar(&l1(&fake, &rows(&data.target, &idx)?)?)? * idx.len() as f64;
    }
    Ok(sum / data.len() as f64)
}

/// Fraction of patch logits on the right side of zero: real pairs positive,
/// generated pairs negative.
fn batch_patch_accuracy(real: &Tensor, fake: &Tensor) -> Result<(f64, usize)> {
    let r = real.flatten_all()?.to_vec1::<f32>()?;
    let f = fake.flatten_all()?.to_vec1::<f32>()?;
    let right = r.iter().filter(|v| **v > 0.0).count() + f.iter().filter(|v| **v < 0.0).count();
    Ok((right as f64 / (r.len() + f.len()) as f64, r.len() + f.len()))
}

/// Patch accuracy of `discriminator` on real pairs versus pairs completed
/// by `generator`.
pub fn patch_accuracy(
    generator: &Generator,
    discriminator: &Discriminator,
    data: &ImagePairs,
) -> Result<f64> {
    let (mut right, mut total) = (0.0, 0usize);
    for idx in chunks(data.len(), EVAL_CHUNK) {
        let src = rows(&data.source, &idx)?;
        let fake = generator.forward(&src)?;
        let (acc, n) = batch_patch_accuracy(
            &discriminator.forward(&src, &rows(&data.target, &idx)?)?,
            &discriminator.forward(&src, &fake)?,
        )?;
        right += acc * n as f64;
        total += n;
    }
    Ok(right / total as f64)
}

fn discriminator_loss(
    d: &Discriminator,
    src: &Tensor,
    tgt: &Tensor,
    fake: &Tensor,
) -> Result<(Tensor, f64)> {
    let real_logits = d.forward(src, tgt)?;
    let fake_logits = d.forward(src, fake)?;
    let loss =
        ((bce_with_logits(&real_logits, 1.0)? + bce_with_logits(&fake_logits, 0.0)?)? * 0.5)?;
    Ok((loss, batch_patch_accuracy(&real_logits, &fake_logits)?.0))
}

fn check_output_range(fake: &Tensor, target: &Tensor, step: u64) -> Result<(f64, f64)> {
    if fake.dims() != target.dims() {
        return Err(NetError::Invariant(format!(
            "generator output {:?} at step {step}",
            fake.dims()
        )));
    }
    let lo = scalar(&fake.min_all()?)?;
    let hi = scalar(&fake.max_all()?)?;
    if lo < -1.0 || hi > 1.0 {
        return Err(NetError::Invariant(format!(
            "generator output range [{lo}, {hi}] at step {step}"
        )));
    }
    Ok((lo, hi))
}

/// Alternating conditional GAN training: one discriminator update on real
/// versus generated patches, then one generator update on the adversarial
/// term plus `lambda_l1` times the mean absolute error to the target.
pub fn train_translator(
    generator: Generator,
    discriminator: Discriminator,
    train: &ImagePairs,
    val: Option<&ImagePairs>,
    config: &TranslatorTrainConfig,
) -> Result<TranslatorRun> {
    config.validate()?;
    if train.is_empty() {
        return Err(NetError::Data("no training pairs".into()));
    }
    let val = val.filter(|v| !v.is_empty());
    let mut opt_g = config.optim.build(generator.params().vars().to_vec())?;
    let mut opt_d = config.optim.build(discriminator.params().vars().to_vec())?;
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = MetricLog::new();
    let initial_val_l1 = val.map(|v| held_out_l1(&generator, v)).transpose()?;
    if let Some(l) = initial_val_l1 {
        log.record(STAGE, Phase::Val, 0, None, &[("l1", l)])?;
    }
    let mut final_val_l1 = initial_val_l1;
    let mut step = 0u64;
    'outer: loop {
        for idx in epoch_batches(train.len(), config.batch_size, &mut shuffle) {
            if step == config.steps {
                break 'outer;
            }
            step += 1;
            let src = rows(&train.source, &idx)?;
            let tgt = rows(&train.target, &idx)?;
            let fake = generator.forward(&src)?;

            let (d_loss, patch_acc) =
                discriminator_loss(&discriminator, &src, &tgt, &fake.detach())?;
            let d_loss_v = scalar(&d_loss)?;
            check_finite(STAGE, step, &[("d_loss", d_loss_v)])?;
            let lr = config.optim.lr_at(step, config.steps);
            opt_d.set_learning_rate(lr);
            opt_d.backward_step(&d_loss)?;

            let g_adv = bce_with_logits(&discriminator.forward(&src, &fake)?, 1.0)?;
            let mae = l1(&fake, &tgt)?;
            let mae_v = scalar(&mae)?;
            let (g_loss, g_l1_v) = if config.lambda_l1 > 0.0 {
                (
                    (&g_adv + (&mae * config.lambda_l1)?)?,
                    config.lambda_l1 * mae_v,
                )
            } else {
                (g_adv.clone(), 0.0)
            };
            let values = [
                ("d_loss", d_loss_v),
                ("g_adv", scalar(&g_adv)?),
                ("g_l1", g_l1_v),
                ("g_loss", scalar(&g_loss)?),
                ("mae", mae_v),
                ("patch_accuracy", patch_acc),
            ];
            check_finite(STAGE, step, &values)?;
            opt_g.set_learning_rate(lr);
            opt_g.backward_step(&g_loss)?;

            if step.is_multiple_of(config.log_every) || step == config.steps {
                let (lo, hi) = check_output_range(&fake, &tgt, step)?;
                let mut all = values.to_vec();
                all.extend([("output_min", lo), ("output_max", hi)]);
                log.record(STAGE, Phase::Train, step, None, &all)?;
            }
            if let Some(v) = val {
                if step.is_multiple_of(config.eval_every) || step == config.steps {
                    let l = held_out_l1(&generator, v)?;
                    log.record(STAGE, Phase::Val, step, None, &[("l1", l)])?;
                    final_val_l1 = Some(l);
                }
            }
        }
        if config.steps == 0 {
            break;
        }
    }
    Ok(TranslatorRun {
        generator,
        discriminator,
        log,
        initial_val_l1,
        final_val_l1,
        steps: step,
    })
}

/// Trains only the discriminator against a frozen generator.
pub fn train_discriminator(
    generator: &Generator,
    discriminator: Discriminator,
    train: &ImagePairs,
    config: &TranslatorTrainConfig,
) -> Result<(Discriminator, MetricLog)> {
    config.validate()?;
    if train.is_empty() {
        return Err(NetError::Data("no training pairs".into()));
    }
    let fakes = translate(generator, &train.source)?.detach();
    let mut opt = config.optim.build(discriminator.params().vars().to_vec())?;
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = MetricLog::new();
    let mut step = 0u64;
    while step < config.steps {
        for idx in epoch_batches(train.len(), config.batch_size, &mut shuffle) {
            if step == config.steps {
                break;
            }
            step += 1;
            let src = rows(&train.source, &idx)?;
            let (loss, acc) = discriminator_loss(
                &discriminator,
                &src,
                &rows(&train.target, &idx)?,
                &rows(&fakes, &idx)?,
            )?;
            let loss_v = scalar(&loss)?;
            check_finite(DISC_STAGE, step, &[("d_loss", loss_v)])?;
            opt.backward_step(&loss)?;
            if step.is_multiple_of(config.log_every) || step == config.steps {
                log.record(
                    DISC_STAGE,
                    Phase::Train,
                    step,
                    None,
                    &[("d_loss", loss_v), ("patch_accuracy", acc)],
                )?;
            }
        }
    }
    Ok((discriminator, log))
}
