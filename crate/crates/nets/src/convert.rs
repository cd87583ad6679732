//! Conversions between 8-bit images and NCHW float tensors.
//!
//! Classifier and regressor take [`ValueRange::Unit`] (`v / 255`); the
//! translator takes and produces [`ValueRange::Signed`] (`2 v / 255 - 1`).

use candle_core::{DType, Device, Tensor};
use image::RgbImage;

use crate::{NetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueRange {
    Unit,
    Signed,
}

impl ValueRange {
    fn encode(&self, v: u8) -> f32 {
        let u = f32::from(v) / 255.0;
        match self {
            ValueRange::Unit => u,
            ValueRange::Signed => 2.0 * u - 1.0,
        }
    }

    fn decode(&self, v: f32) -> u8 {
        let u = match self {
            ValueRange::Unit => v,
            ValueRange::Signed => 0.5 * (v + 1.0),
        };
        (u.clamp(0.0, 1.0) * 255.0).round() as u8
    }
}

/// Stacks equally sized images into a `(N, 3, H, W)` f32 tensor.
pub fn images_to_tensor(images: &[&RgbImage], range: ValueRange) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| NetError::Data("no images to convert".into()))?;
    let (w, h) = first.dimensions();
    let plane = (w * h) as usize;
    let mut data = vec![0f32; images.len() * 3 * plane];
    for (n, img) in images.iter().enumerate() {
        if img.dimensions() != (w, h) {
            return Err(NetError::Data(format!(
                "image {n} is {:?}, expected {:?}",
                img.dimensions(),
                (w, h)
            )));
        }
        let base = n * 3 * plane;
        for (i, px) in img.pixels().enumerate() {
            for c in 0..3 {
                data[base + c * plane + i] = range.encode(px.0[c]);
            }
        }
    }
    Ok(Tensor::from_vec(
        data,
        (images.len(), 3, h as usize, w as usize),
        &Device::Cpu,
    )?)
}

/// Converts a `(N, 3, H, W)` tensor back to images, clamping to the range.
pub fn tensor_to_images(t: &Tensor, range: ValueRange) -> Result<Vec<RgbImage>> {
    let (n, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(NetError::Shape {
            expected: vec![n, 3, h, w],
            got: t.dims().to_vec(),
        });
    }
    let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let plane = h * w;
    Ok((0..n)
        .map(|k| {
            RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let i = y as usize * w + x as usize;
                image::Rgb([0, 1, 2].map(|ch| range.decode(data[k * 3 * plane + ch * plane + i])))
            })
        })
        .collect())
}

/// Maps a signed-range tensor to the unit range.
pub fn signed_to_unit(t: &Tensor) -> Result<Tensor> {
    Ok(((t + 1.0)? * 0.5)?)
}
