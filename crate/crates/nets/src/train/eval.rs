use std::collections::BTreeMap;

use lidarloc_core::geometry::{PoseErrorAccumulator, PoseErrorSummary, SceneBounds};
use lidarloc_core::synth::SamplePair;
use serde::{Deserialize, Serialize};

use super::{chunks, rows, LabeledImages, EVAL_CHUNK};
use crate::convert::{images_to_tensor, signed_to_unit, ValueRange};
use crate::{decode_pose, Classifier, Direction, Generator, NetError, Regressor, Result};

/// `counts[i][j]`: samples of true scene `i` predicted as scene `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.is_empty() {
            return Err(NetError::Data("confusion matrix of an empty split".into()));
        }
        let mut counts = vec![vec![0; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(NetError::Data(format!(
                    "class {} outside {classes} classes",
                    t.max(p)
                )));
            }
            counts[t][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: usize = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        diag as f64 / self.total() as f64
    }

    /// Every non-empty row has more samples on the diagonal than off it.
    pub fn diagonally_dominant(&self) -> bool {
        self.counts.iter().enumerate().all(|(i, row)| {
            let off: usize = row
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, c)| c)
                .sum();
            row.iter().sum::<usize>() == 0 || row[i] > off
        })
    }
}

/// Argmax predictions (lowest class on ties) over a labeled set.
pub fn confusion_matrix(model: &Classifier, data: &LabeledImages) -> Result<ConfusionMatrix> {
    if data.is_empty() {
        return Err(NetError::Data("confusion matrix of an empty split".into()));
    }
    let mut predicted = Vec::with_capacity(data.len());
    for idx in chunks(data.len(), EVAL_CHUNK) {
        predicted.extend(
            model
                .predict(&rows(&data.images, &idx)?)?
                .into_iter()
                .map(|p| p.0),
        );
    }
    let truth: Vec<usize> = data.labels.iter().map(|&l| l as usize).collect();
    ConfusionMatrix::from_predictions(&truth, &predicted, model.spec().num_classes)
}

/// Per-scene regressors with the bounds that map their outputs to meters.
pub type SceneModels = BTreeMap<usize, (Regressor, SceneBounds)>;

/// Position (meters) and quaternion errors on a test set, through the
/// translator (`end_to_end`) and from ground-truth point clouds (`oracle`).
/// Each sample uses the regressor of its true scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub end_to_end: PoseErrorSummary,
    pub oracle: PoseErrorSummary,
    pub per_scene: BTreeMap<usize, SceneErrors>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneErrors {
    pub end_to_end: PoseErrorSummary,
    pub oracle: PoseErrorSummary,
}

pub fn error_table(
    regressors: &SceneModels,
    translator: &Generator,
    test: &[SamplePair],
) -> Result<ErrorTable> {
    if translator.direction() != Direction::RgbToPointcloud {
        return Err(NetError::Config(
            "error table needs an rgb2pc translator".into(),
        ));
    }
    if test.is_empty() {
        return Err(NetError::Data("error table of an empty split".into()));
    }
    let mut by_scene: BTreeMap<usize, Vec<&SamplePair>> = BTreeMap::new();
    for s in test {
        by_scene.entry(s.scene_id).or_default().push(s);
    }
    let (mut e2e_all, mut oracle_all) = (PoseErrorAccumulator::new(), PoseErrorAccumulator::new());
    let mut per_scene = BTreeMap::new();
    for (scene, samples) in by_scene {
        let (model, bounds) = regressors
            .get(&scene)
            .ok_or(NetError::MissingScene(scene))?;
        let (mut e2e, mut oracle) = (PoseErrorAccumulator::new(), PoseErrorAccumulator::new());
        for idx in chunks(samples.len(), EVAL_CHUNK) {
            let batch: Vec<&SamplePair> = idx.iter().map(|&i| samples[i]).collect();
            let rgb = images_to_tensor(
                &batch.iter().map(|s| &s.rgb).collect::<Vec<_>>(),
                ValueRange::Signed,
            )?;
            let pc = images_to_tensor(
                &batch.iter().map(|s| &s.pointcloud).collect::<Vec<_>>(),
                ValueRange::Unit,
            )?;
            let translated = signed_to_unit(&translator.forward(&rgb)?)?;
            let via_gan = model.predict(&translated)?;
            let via_truth = model.predict(&pc)?;
            for (k, s) in batch.iter().enumerate() {
                let truth_pos = bounds.denormalize_position(&s.pose.position)?;
                let truth_q = s.pose.orientation();
                for (raw, accs) in [
                    (&via_gan[k], [&mut e2e, &mut e2e_all]),
                    (&via_truth[k], [&mut oracle, &mut oracle_all]),
                ] {
                    let (p, q) = decode_pose(raw, bounds)?;
                    for acc in accs {
                        acc.push((&p, &q), (&truth_pos, &truth_q))?;
                    }
                }
            }
        }
        let summary = |a: &PoseErrorAccumulator| a.summary().expect("scene has samples");
        per_scene.insert(
            scene,
            SceneErrors {
                end_to_end: summary(&e2e),
                oracle: summary(&oracle),
            },
        );
    }
    Ok(ErrorTable {
        end_to_end: e2e_all.summary().expect("non-empty"),
        oracle: oracle_all.summary().expect("non-empty"),
        per_scene,
    })
}
