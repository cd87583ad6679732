//! Classify, translate, regress: the full localization chain.

use std::collections::BTreeMap;

use image::RgbImage;
use lidarloc_core::geometry::{PoseErrorAccumulator, PoseErrorSummary, Quaternion};
use lidarloc_core::synth::SamplePair;
use lidarloc_nets::convert::{images_to_tensor, signed_to_unit, ValueRange};
use lidarloc_nets::decode_pose;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::registry::ModelRegistry;

/// Estimates outside the scene bounds grown by this fraction per side are
/// flagged.
pub const BOUNDS_MARGIN: f64 = 0.1;

const BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub scene_id: usize,
    /// Softmax probability of `scene_id`, the value the argmax picked.
    pub confidence: f64,
    /// Meters, in the predicted scene's frame.
    pub position: [f64; 3],
    /// Unit `(w, x, y, z)`, world-from-camera.
    pub orientation: Quaternion,
    pub out_of_bounds: bool,
}

/// Where the regressor's point-cloud input comes from.
#[derive(Debug, Clone, Copy)]
pub enum PointSource<'a> {
    /// The rgb2pc translator's output (normal operation).
    Translated,
    /// Ground-truth point-cloud renders paired with the RGB inputs.
    GroundTruth(&'a [&'a RgbImage]),
}

impl ModelRegistry {
    pub fn localize(&self, rgb: &RgbImage) -> Result<PoseEstimate> {
        Ok(self
            .localize_batch(&[rgb], PointSource::Translated)?
            .remove(0))
    }

    /// Localizes every image. Each one goes to the regressor of its own
    /// predicted scene; a missing regressor is an error, never a fallback.
    pub fn localize_batch(
        &self,
        rgbs: &[&RgbImage],
        points: PointSource<'_>,
    ) -> Result<Vec<PoseEstimate>> {
        let (classifier, translator) = self.front_end()?;
        let expected = self.image_size();
        let truth = match points {
            PointSource::GroundTruth(pcs) if pcs.len() != rgbs.len() => {
                return Err(PipelineError::Invalid(format!(
                    "{} point clouds for {} images",
                    pcs.len(),
                    rgbs.len()
                )));
            }
            PointSource::GroundTruth(pcs) => Some(pcs),
            PointSource::Translated => None,
        };
        for img in rgbs.iter().chain(truth.into_iter().flatten()) {
            if img.dimensions() != expected {
                return Err(PipelineError::ImageSize {
                    expected,
                    got: img.dimensions(),
                });
            }
        }
        let mut out = Vec::with_capacity(rgbs.len());
        for (c, chunk) in rgbs.chunks(BATCH).enumerate() {
            let classes = classifier.predict(&images_to_tensor(chunk, ValueRange::Unit)?)?;
            let mut by_scene: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (k, (scene, _)) in classes.iter().enumerate() {
                by_scene.entry(*scene).or_default().push(k);
            }
            let mut estimates: Vec<Option<PoseEstimate>> = vec![None; chunk.len()];
            for (scene, members) in by_scene {
                let (regressor, bounds) = self
                    .regressor(scene)
                    .ok_or(PipelineError::MissingRegressor(scene))?;
                let input = match truth {
                    Some(pcs) => {
                        let imgs: Vec<&RgbImage> =
                            members.iter().map(|&k| pcs[c * BATCH + k]).collect();
                        images_to_tensor(&imgs, ValueRange::Unit)?
                    }
                    None => {
                        let imgs: Vec<&RgbImage> = members.iter().map(|&k| chunk[k]).collect();
                        signed_to_unit(
                            &translator.forward(&images_to_tensor(&imgs, ValueRange::Signed)?)?,
                        )?
                    }
                };
                let allowed = bounds.expanded(BOUNDS_MARGIN);
                for (raw, &k) in regressor.predict(&input)?.iter().zip(&members) {
                    let (position, orientation) = decode_pose(raw, bounds)?;
                    estimates[k] = Some(PoseEstimate {
                        scene_id: scene,
                        confidence: classes[k].1,
                        position: position.into(),
                        orientation,
                        out_of_bounds: !allowed.contains(&position, 0.0),
                    });
                }
            }
            out.extend(
                estimates
                    .into_iter()
                    .map(|e| e.expect("every image has an estimate")),
            );
        }
        Ok(out)
    }
}

/// Whole-pipeline accuracy on labeled samples. Position errors compare the
/// estimate with the true metric position, so a misclassified image is
/// scored with whatever its wrong scene's regressor produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub count: usize,
    pub scene_accuracy: f64,
    pub end_to_end: PoseErrorSummary,
    /// Same classifier decisions, ground-truth point clouds instead of the
    /// translator.
    pub oracle: PoseErrorSummary,
    pub out_of_bounds: usize,
    /// Mean position error over the scene diagonal.
    pub end_to_end_relative: f64,
    pub oracle_relative: f64,
}

pub fn evaluate_pipeline(
    registry: &ModelRegistry,
    samples: &[SamplePair],
) -> Result<PipelineReport> {
    if samples.is_empty() {
        return Err(PipelineError::Invalid("no samples to evaluate".into()));
    }
    let rgbs: Vec<&RgbImage> = samples.iter().map(|s| &s.rgb).collect();
    let pcs: Vec<&RgbImage> = samples.iter().map(|s| &s.pointcloud).collect();
    let e2e = registry.localize_batch(&rgbs, PointSource::Translated)?;
    let oracle = registry.localize_batch(&rgbs, PointSource::GroundTruth(&pcs))?;
    let (mut acc_e2e, mut acc_oracle) = (PoseErrorAccumulator::new(), PoseErrorAccumulator::new());
    let (mut rel_e2e, mut rel_oracle) = (0.0, 0.0);
    let mut correct = 0;
    for ((s, a), b) in samples.iter().zip(&e2e).zip(&oracle) {
        let bounds = registry
            .info()
            .bounds(s.scene_id)
            .ok_or(PipelineError::MissingRegressor(s.scene_id))?;
        let truth = bounds.denormalize_position(&s.pose.position)?;
        let q = s.pose.orientation();
        correct += (a.scene_id == s.scene_id) as usize;
        for (est, acc, rel) in [
            (a, &mut acc_e2e, &mut rel_e2e),
            (b, &mut acc_oracle, &mut rel_oracle),
        ] {
            let p = est.position.into();
            acc.push((&p, &est.orientation), (&truth, &q))?;
            *rel += (p - truth).norm() / bounds.diagonal();
        }
    }
    let n = samples.len() as f64;
    Ok(PipelineReport {
        count: samples.len(),
        scene_accuracy: correct as f64 / n,
        end_to_end: acc_e2e.summary().expect("non-empty"),
        oracle: acc_oracle.summary().expect("non-empty"),
        out_of_bounds: e2e.iter().filter(|e| e.out_of_bounds).count(),
        end_to_end_relative: rel_e2e / n,
        oracle_relative: rel_oracle / n,
    })
}
