//! Functional building blocks over candle tensors (NCHW layout).

use candle_core::{Tensor, D};
use rand::Rng;

use crate::ops::{self, add_channel_bias, col2im, im2col, Patches};
use crate::{Mode, NetError, Result};

/// Convolution with a square `(cout, cin, k, k)` kernel, as a matmul over
/// extracted patches.
pub fn conv2d(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (b, _, _, _) = x.dims4()?;
    let (cout, cin, k, _) = weight.dims4()?;
    let (cols, g) = if (k, stride, padding) == (1, 1, 0) {
        let (_, _, h, w) = x.dims4()?;
        (
            x.reshape((b, cin, h * w))?
                .transpose(0, 1)?
                .reshape((cin, b * h * w))?,
            Patches::new(1, 1, 0, h, w)?,
        )
    } else {
        im2col(x, k, stride, padding)?
    };
    let y = weight.reshape((cout, cin * k * k))?.matmul(&cols)?;
    let y = y
        .reshape((cout, b, g.out_h(), g.out_w()))?
        .transpose(0, 1)?;
    Ok(add_channel_bias(&y, bias)?)
}

/// Transposed convolution; `weight` is `(cin, cout, k, k)`. Output size is
/// `(h - 1)·stride - 2·padding + k`.
pub fn conv_transpose2d(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (b, _, h, w) = x.dims4()?;
    let (cin, cout, k, _) = weight.dims4()?;
    let (oh, ow) = ((h - 1) * stride + k, (w - 1) * stride + k);
    if oh < 2 * padding + 1 || ow < 2 * padding + 1 {
        return Err(NetError::InvalidSpec(format!(
            "padding {padding} too large for a {h}x{w} transposed input"
        )));
    }
    let g = Patches::new(k, stride, padding, oh - 2 * padding, ow - 2 * padding)?;
    let wt = weight.reshape((cin, cout * k * k))?.t()?;
    let cols = wt.matmul(
        &x.reshape((b, cin, h * w))?
            .transpose(0, 1)?
            .reshape((cin, b * h * w))?,
    )?;
    Ok(add_channel_bias(&col2im(&cols, g)?, bias)?)
}

/// 3x3 depthwise convolution with padding 1; `weight` is `(c, 1, 3, 3)`.
pub fn depthwise3x3(x: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let c = weight.dim(0)?;
    let y = ops::depthwise3x3(x, &weight.reshape((c, 9))?, stride)?;
    Ok(add_channel_bias(&y, bias)?)
}

/// Per-channel 3x3 mean with zero padding.
pub fn box_blur3(x: &Tensor) -> Result<Tensor> {
    let c = x.dim(1)?;
    let weight = Tensor::full(1.0f32 / 9.0, (c, 9), x.device())?.to_dtype(x.dtype())?;
    Ok(ops::depthwise3x3(x, &weight, 1)?)
}

/// `x W^T + b` for `x` of shape `(B, in)`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    Ok(x.matmul(&weight.t()?)?.broadcast_add(bias)?)
}

pub fn swish(x: &Tensor) -> Result<Tensor> {
    Ok(x.silu()?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

pub fn relu6(x: &Tensor) -> Result<Tensor> {
    Ok(ops::relu6(x)?)
}

/// Mean over the spatial dimensions: `(B, C, H, W) -> (B, C)`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(D::Minus1)?.mean(D::Minus1)?)
}

/// Per-sample stochastic depth on a residual branch. Training mode keeps
/// each sample's branch with probability `1 - rate` and rescales kept
/// branches by `1 / (1 - rate)`; a rate of 1 removes the branch.
pub fn drop_connect(branch: &Tensor, rate: f64, mode: &mut Mode<'_>) -> Result<Option<Tensor>> {
    let rng = match mode {
        Mode::Eval => return Ok(Some(branch.clone())),
        Mode::Train(rng) => rng,
    };
    if rate <= 0.0 {
        return Ok(Some(branch.clone()));
    }
    if rate >= 1.0 {
        return Ok(None);
    }
    let b = branch.dim(0)?;
    let keep = 1.0 - rate;
    let mask: Vec<f32> = (0..b)
        .map(|_| {
            if rng.random::<f64>() < keep {
                (1.0 / keep) as f32
            } else {
                0.0
            }
        })
        .collect();
    let mask = Tensor::from_vec(mask, (b, 1, 1, 1), branch.device())?.to_dtype(branch.dtype())?;
    Ok(Some(branch.broadcast_mul(&mask)?))
}

/// Mean binary cross-entropy of raw logits against a constant target,
/// `max(x, 0) - x t + log(1 + exp(-|x|))`.
pub fn bce_with_logits(logits: &Tensor, target: f64) -> Result<Tensor> {
    let softplus = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
    let loss = ((logits.relu()? - (logits * target)?)? + softplus)?;
    Ok(loss.mean_all()?)
}

pub fn l1(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.abs()?.mean_all()?)
}
