use std::path::Path;

use candle_core::{DType, Tensor};
use lidarloc_core::geometry::{Quaternion, SceneBounds};
use nalgebra::Vector3;

use crate::checkpoint::{self, CheckpointMeta, ModelKind};
use crate::layers::{conv2d, depthwise3x3, global_avg_pool, linear, relu6};
use crate::{check_input, NetError, ParamSet, RegressorSpec, Result};

/// Pose regressor: stride-2 stem, inverted residual blocks (1x1 expansion,
/// 3x3 depthwise, linear 1x1 projection; the input is added back only when
/// stride and width allow), global average pooling and a linear 7-output
/// head `[x, y, z, w, qx, qy, qz]` with no activation.
#[derive(Debug, Clone)]
pub struct Regressor {
    spec: RegressorSpec,
    params: ParamSet,
}

impl Regressor {
    pub fn new(spec: RegressorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let params = ParamSet::xavier(&spec.layout(), seed)?;
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: RegressorSpec, params: ParamSet) -> Result<Self> {
        spec.validate()?;
        let params = params.relayout(&spec.layout())?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &RegressorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Raw `(B, 7)` outputs for point-cloud images in `[0, 1]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_input(x, 3, self.spec.input_size)?;
        let p = &self.params;
        let mut h = relu6(&conv2d(x, p.get("stem.weight"), p.get("stem.bias"), 2, 1)?)?;
        for i in 0..self.spec.widths.len() {
            let w = |n: &str| p.get(&format!("blocks.{i}.{n}"));
            let e = relu6(&conv2d(&h, w("expand.weight"), w("expand.bias"), 1, 0)?)?;
            let d = relu6(&depthwise3x3(
                &e,
                w("dw.weight"),
                w("dw.bias"),
                self.spec.strides[i],
            )?)?;
            let out = conv2d(&d, w("project.weight"), w("project.bias"), 1, 0)?;
            h = if self.spec.has_residual(i) {
                (out + h)?
            } else {
                out
            };
        }
        linear(
            &global_avg_pool(&h)?,
            p.get("head.weight"),
            p.get("head.bias"),
        )
    }

    /// Raw outputs as double precision rows.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<[f64; 7]>> {
        let rows = self.forward(x)?.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        Ok(rows
            .into_iter()
            .map(|r| r.try_into().expect("seven outputs"))
            .collect())
    }

    /// Saves the parameters together with the scene's normalization bounds.
    pub fn save(
        &self,
        path: &Path,
        step: u64,
        scene_id: usize,
        bounds: &SceneBounds,
    ) -> Result<()> {
        let extra = serde_json::json!({ "scene_id": scene_id, "bounds": bounds });
        checkpoint::save(
            path,
            ModelKind::Regressor,
            &self.spec,
            &self.params,
            step,
            extra,
        )
    }

    /// Returns the model, its scene id and bounds, and the metadata.
    pub fn load(path: &Path) -> Result<(Self, usize, SceneBounds, CheckpointMeta)> {
        let (meta, tensors) = checkpoint::load(path, ModelKind::Regressor)?;
        let spec: RegressorSpec = meta.spec_as(path)?;
        spec.validate()?;
        let bad = |what: &str, e: serde_json::Error| NetError::Checkpoint {
            path: path.to_path_buf(),
            message: format!("{what}: {e}"),
        };
        let scene_id: usize = serde_json::from_value(meta.extra["scene_id"].clone())
            .map_err(|e| bad("scene_id", e))?;
        let bounds: SceneBounds =
            serde_json::from_value(meta.extra["bounds"].clone()).map_err(|e| bad("bounds", e))?;
        let params = ParamSet::from_named(&spec.layout(), tensors)?;
        Ok((Self { spec, params }, scene_id, bounds, meta))
    }
}

/// Turns a raw 7-output into a metric position (not clamped to the bounds)
/// and a unit quaternion.
pub fn decode_pose(raw: &[f64; 7], bounds: &SceneBounds) -> Result<(Vector3<f64>, Quaternion)> {
    let position = bounds.denormalize_position_unchecked(&Vector3::new(raw[0], raw[1], raw[2]));
    let q = Quaternion::new(raw[3], raw[4], raw[5], raw[6]).normalize()?;
    Ok((position, q))
}
