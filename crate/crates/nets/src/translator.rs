use std::fmt;
use std::path::Path;
use std::str::FromStr;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointMeta, ModelKind};
use crate::layers::{conv2d, conv_transpose2d, leaky_relu};
use crate::{check_input, DiscriminatorSpec, GeneratorSpec, NetError, ParamSet, Result};

const LEAK: f64 = 0.2;

/// Translation direction. Each direction has its own parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "rgb2pc")]
    RgbToPointcloud,
    #[serde(rename = "pc2rgb")]
    PointcloudToRgb,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::RgbToPointcloud => "rgb2pc",
            Direction::PointcloudToRgb => "pc2rgb",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rgb2pc" => Ok(Direction::RgbToPointcloud),
            "pc2rgb" => Ok(Direction::PointcloudToRgb),
            other => Err(format!(
                "unknown direction {other:?}, expected rgb2pc or pc2rgb"
            )),
        }
    }
}

/// U-Net generator: stride-2 leaky-ReLU encoder, transposed-convolution
/// decoder that concatenates the matching encoder features, tanh output.
#[derive(Debug, Clone)]
pub struct Generator {
    spec: GeneratorSpec,
    direction: Direction,
    params: ParamSet,
}

impl Generator {
    pub fn new(spec: GeneratorSpec, direction: Direction, seed: u64) -> Result<Self> {
        spec.validate()?;
        let params = ParamSet::xavier(&spec.layout(), seed)?;
        Ok(Self {
            spec,
            direction,
            params,
        })
    }

    pub fn from_params(
        spec: GeneratorSpec,
        direction: Direction,
        params: ParamSet,
    ) -> Result<Self> {
        spec.validate()?;
        let params = params.relayout(&spec.layout())?;
        Ok(Self {
            spec,
            direction,
            params,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Maps a batch in `[-1, 1]` to a batch of the same shape in `[-1, 1]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_input(x, self.spec.channels, self.spec.input_size)?;
        let p = &self.params;
        let n = self.spec.widths.len();
        let mut skips = Vec::with_capacity(n);
        let mut h = x.clone();
        for i in 0..n {
            h = leaky_relu(
                &conv2d(
                    &h,
                    p.get(&format!("enc.{i}.weight")),
                    p.get(&format!("enc.{i}.bias")),
                    2,
                    1,
                )?,
                LEAK,
            )?;
            skips.push(h.clone());
        }
        for j in 0..n {
            if j > 0 {
                h = Tensor::cat(&[&h, &skips[n - 1 - j]], 1)?;
            }
            h = conv_transpose2d(
                &h,
                p.get(&format!("dec.{j}.weight")),
                p.get(&format!("dec.{j}.bias")),
                2,
                1,
            )?;
            h = if j + 1 == n { h.tanh()? } else { h.relu()? };
        }
        Ok(h)
    }

    pub fn save(&self, path: &Path, step: u64) -> Result<()> {
        let extra = serde_json::json!({ "direction": self.direction });
        checkpoint::save(
            path,
            ModelKind::Generator,
            &self.spec,
            &self.params,
            step,
            extra,
        )
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let (meta, tensors) = checkpoint::load(path, ModelKind::Generator)?;
        let spec: GeneratorSpec = meta.spec_as(path)?;
        spec.validate()?;
        let direction: Direction = serde_json::from_value(meta.extra["direction"].clone())
            .map_err(|e| NetError::Checkpoint {
                path: path.to_path_buf(),
                message: format!("direction: {e}"),
            })?;
        let params = ParamSet::from_named(&spec.layout(), tensors)?;
        Ok((
            Self {
                spec,
                direction,
                params,
            },
            meta,
        ))
    }
}

/// Patch discriminator over the channel-stacked (condition, candidate)
/// pair; returns raw logits of shape `(B, 1, n, n)`.
#[derive(Debug, Clone)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    params: ParamSet,
}

impl Discriminator {
    pub fn new(spec: DiscriminatorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let params = ParamSet::xavier(&spec.layout(), seed)?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn forward(&self, condition: &Tensor, candidate: &Tensor) -> Result<Tensor> {
        let b = check_input(condition, self.spec.channels, self.spec.input_size)?;
        if check_input(candidate, self.spec.channels, self.spec.input_size)? != b {
            return Err(NetError::Shape {
                expected: condition.dims().to_vec(),
                got: candidate.dims().to_vec(),
            });
        }
        let p = &self.params;
        let mut h = Tensor::cat(&[condition, candidate], 1)?;
        for i in 0..self.spec.widths.len() {
            h = leaky_relu(
                &conv2d(
                    &h,
                    p.get(&format!("conv.{i}.weight")),
                    p.get(&format!("conv.{i}.bias")),
                    2,
                    1,
                )?,
                LEAK,
            )?;
        }
        conv2d(&h, p.get("head.weight"), p.get("head.bias"), 1, 0)
    }

    pub fn save(&self, path: &Path, step: u64) -> Result<()> {
        checkpoint::save(
            path,
            ModelKind::Discriminator,
            &self.spec,
            &self.params,
            step,
            serde_json::Value::Null,
        )
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let (meta, tensors) = checkpoint::load(path, ModelKind::Discriminator)?;
        let spec: DiscriminatorSpec = meta.spec_as(path)?;
        spec.validate()?;
        let params = ParamSet::from_named(&spec.layout(), tensors)?;
        Ok((Self { spec, params }, meta))
    }
}
