use std::path::Path;

use candle_core::Tensor;

use crate::checkpoint::{self, CheckpointMeta, ModelKind};
use crate::layers::{conv2d, drop_connect, global_avg_pool, linear, swish};
use crate::{check_input, ClassifierSpec, Mode, ParamSet, Result};

/// Scene classifier: stride-2 stem, then blocks of a stride-2 swish
/// convolution followed by a drop-connect residual `h + dc(swish(conv(h)))`,
/// global average pooling and a linear head.
#[derive(Debug, Clone)]
pub struct Classifier {
    spec: ClassifierSpec,
    params: ParamSet,
}

impl Classifier {
    pub fn new(spec: ClassifierSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let params = ParamSet::xavier(&spec.layout(), seed)?;
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: ClassifierSpec, params: ParamSet) -> Result<Self> {
        spec.validate()?;
        let params = params.relayout(&spec.layout())?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Unnormalized class scores, `(B, S)`. Inputs are RGB in `[0, 1]`.
    pub fn logits(&self, x: &Tensor, mode: &mut Mode<'_>) -> Result<Tensor> {
        check_input(x, 3, self.spec.input_size)?;
        let p = &self.params;
        let mut h = swish(&conv2d(x, p.get("stem.weight"), p.get("stem.bias"), 2, 1)?)?;
        for i in 0..self.spec.widths.len() {
            let w = |n: &str| p.get(&format!("blocks.{i}.{n}"));
            h = swish(&conv2d(&h, w("down.weight"), w("down.bias"), 2, 1)?)?;
            let branch = swish(&conv2d(&h, w("conv.weight"), w("conv.bias"), 1, 1)?)?;
            if let Some(b) = drop_connect(&branch, self.spec.drop_connect, mode)? {
                h = (h + b)?;
            }
        }
        linear(
            &global_avg_pool(&h)?,
            p.get("head.weight"),
            p.get("head.bias"),
        )
    }

    /// Class distributions, `(B, S)`.
    pub fn forward(&self, x: &Tensor, mode: &mut Mode<'_>) -> Result<Tensor> {
        Ok(candle_nn::ops::softmax_last_dim(&self.logits(x, mode)?)?)
    }

    /// Argmax class (lowest index on ties) and its probability per row.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<(usize, f64)>> {
        let probs = self
            .forward(x, &mut Mode::Eval)?
            .to_dtype(candle_core::DType::F64)?
            .to_vec2::<f64>()?;
        Ok(probs.iter().map(|row| argmax(row)).collect())
    }

    pub fn save(&self, path: &Path, step: u64) -> Result<()> {
        checkpoint::save(
            path,
            ModelKind::Classifier,
            &self.spec,
            &self.params,
            step,
            serde_json::Value::Null,
        )
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let (meta, tensors) = checkpoint::load(path, ModelKind::Classifier)?;
        let spec: ClassifierSpec = meta.spec_as(path)?;
        spec.validate()?;
        let params = ParamSet::from_named(&spec.layout(), tensors)?;
        Ok((Self { spec, params }, meta))
    }
}

/// Index and value of the largest entry; the first one wins ties.
pub(crate) fn argmax(row: &[f64]) -> (usize, f64) {
    let mut best = (0, row[0]);
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}
