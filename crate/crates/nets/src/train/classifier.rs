use candle_core::{Device, Tensor};
use candle_nn::Optimizer;
use lidarloc_core::synth::mix_seed;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_finite, check_positive, chunks, epoch_batches, rows, scalar, LabeledImages, MetricLog,
    OptimConfig, Phase, EVAL_CHUNK,
};
use crate::{Classifier, Mode, NetError, Result};

const STAGE: &str = "classifier";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            batch_size: 32,
            optim: OptimConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct ClassifierRun {
    /// Parameters of the epoch with the best validation accuracy (the final
    /// ones without validation data).
    pub model: Classifier,
    pub log: MetricLog,
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    pub steps: u64,
}

fn accuracy(logits: &Tensor, labels: &[u32]) -> Result<f64> {
    let pred = logits.argmax_keepdim(1)?.flatten_all()?.to_vec1::<u32>()?;
    Ok(pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64)
}

fn labels_tensor(labels: &[u32]) -> Result<Tensor> {
    Ok(Tensor::from_vec(
        labels.to_vec(),
        labels.len(),
        &Device::Cpu,
    )?)
}

/// Mean cross-entropy and accuracy in evaluation mode.
pub(crate) fn evaluate(model: &Classifier, data: &LabeledImages) -> Result<(f64, f64)> {
    let (mut loss, mut correct) = (0.0, 0.0);
    for idx in chunks(data.len(), EVAL_CHUNK) {
        let labels: Vec<u32> = idx.iter().map(|&i| data.labels[i]).collect();
        let logits = model.logits(&rows(&data.images, &idx)?, &mut Mode::Eval)?;
        loss += scalar(&candle_nn::loss::cross_entropy(
            &logits,
            &labels_tensor(&labels)?,
        )?)? * idx.len() as f64;
        correct += accuracy(&logits, &labels)? * idx.len() as f64;
    }
    let n = data.len() as f64;
    Ok((loss / n, correct / n))
}

fn check_labels(data: &LabeledImages, classes: usize, what: &str) -> Result<()> {
    if let Some(l) = data.labels.iter().find(|l| **l as usize >= classes) {
        return Err(NetError::Data(format!(
            "{what} label {l} outside {classes} classes"
        )));
    }
    Ok(())
}

/// Minimizes categorical cross-entropy over scene labels, validating after
/// every epoch (and once before training) and keeping the parameters with
/// the best validation accuracy (earliest on ties).
pub fn train_classifier(
    model: Classifier,
    train: &LabeledImages,
    val: Option<&LabeledImages>,
    config: &ClassifierTrainConfig,
) -> Result<ClassifierRun> {
    check_positive("batch size", config.batch_size)?;
    let classes = model.spec().num_classes;
    check_labels(train, classes, "training")?;
    let mut distinct = train.labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(NetError::Data(format!(
            "classifier needs at least 2 scenes, training data has {}",
            distinct.len()
        )));
    }
    let val = val.filter(|v| !v.is_empty());
    if let Some(v) = val {
        check_labels(v, classes, "validation")?;
    }
    let mut opt = config.optim.build(model.params().vars().to_vec())?;
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
    let mut noise = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 1));
    let mut log = MetricLog::new();
    let mut step = 0u64;
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut validate =
        |model: &Classifier, log: &mut MetricLog, epoch: usize, step: u64| -> Result<()> {
            if let Some(v) = val {
                let (loss, acc) = evaluate(model, v)?;
                log.record(
                    STAGE,
                    Phase::Val,
                    step,
                    Some(epoch),
                    &[("loss", loss), ("accuracy", acc)],
                )?;
                if best.as_ref().is_none_or(|b| acc > b.0) {
                    best = Some((acc, epoch, model.params().snapshot()?));
                }
            }
            Ok(())
        };
    validate(&model, &mut log, 0, step)?;
    let total = (config.epochs * train.len().div_ceil(config.batch_size)) as u64;
    for epoch in 1..=config.epochs {
        for idx in epoch_batches(train.len(), config.batch_size, &mut shuffle) {
            step += 1;
            let labels: Vec<u32> = idx.iter().map(|&i| train.labels[i]).collect();
            let logits = model.logits(&rows(&train.images, &idx)?, &mut Mode::Train(&mut noise))?;
            let loss = candle_nn::loss::cross_entropy(&logits, &labels_tensor(&labels)?)?;
            let loss_v = scalar(&loss)?;
            check_finite(STAGE, step, &[("loss", loss_v)])?;
            opt.set_learning_rate(config.optim.lr_at(step, total));
            opt.backward_step(&loss)?;
            log.record(
                STAGE,
                Phase::Train,
                step,
                Some(epoch),
                &[("loss", loss_v), ("accuracy", accuracy(&logits, &labels)?)],
            )?;
        }
        validate(&model, &mut log, epoch, step)?;
    }
    let (best_val_accuracy, best_epoch) = match best {
        Some((acc, epoch, values)) => {
            model.params().restore(&values)?;
            (Some(acc), epoch)
        }
        None => (None, config.epochs),
    };
    Ok(ClassifierRun {
        model,
        log,
        best_epoch,
        best_val_accuracy,
        steps: step,
    })
}
