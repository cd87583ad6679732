//! Architecture descriptions. Each spec lists its parameter layout and has
//! an independent closed-form parameter count.

use serde::{Deserialize, Serialize};

use crate::params::ParamShape;
use crate::{NetError, Result};

fn conv(prefix: &str, cout: usize, cin: usize, k: usize) -> [ParamShape; 2] {
    [
        ParamShape::weight(
            format!("{prefix}.weight"),
            &[cout, cin, k, k],
            cin * k * k,
            cout * k * k,
        ),
        ParamShape::bias(format!("{prefix}.bias"), cout),
    ]
}

/// Transposed convolution weights are stored `(cin, cout, k, k)`.
fn conv_t(prefix: &str, cin: usize, cout: usize, k: usize) -> [ParamShape; 2] {
    [
        ParamShape::weight(
            format!("{prefix}.weight"),
            &[cin, cout, k, k],
            cin * k * k,
            cout * k * k,
        ),
        ParamShape::bias(format!("{prefix}.bias"), cout),
    ]
}

fn depthwise(prefix: &str, channels: usize) -> [ParamShape; 2] {
    [
        ParamShape::weight(format!("{prefix}.weight"), &[channels, 1, 3, 3], 9, 9),
        ParamShape::bias(format!("{prefix}.bias"), channels),
    ]
}

fn linear(prefix: &str, out: usize, inp: usize) -> [ParamShape; 2] {
    [
        ParamShape::weight(format!("{prefix}.weight"), &[out, inp], inp, out),
        ParamShape::bias(format!("{prefix}.bias"), out),
    ]
}

fn check_size(input_size: usize, halvings: usize, what: &str) -> Result<()> {
    let div = 1usize << halvings;
    if input_size == 0 || !input_size.is_multiple_of(div) {
        return Err(NetError::InvalidSpec(format!(
            "{what} input size {input_size} must be a multiple of {div}"
        )));
    }
    Ok(())
}

fn check_widths(widths: &[usize], what: &str) -> Result<()> {
    if widths.is_empty() || widths.contains(&0) {
        return Err(NetError::InvalidSpec(format!(
            "{what} widths must be non-empty and positive"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierSpec {
    pub input_size: usize,
    pub num_classes: usize,
    pub stem_width: usize,
    pub widths: Vec<usize>,
    /// Probability of dropping a residual branch per sample during training.
    pub drop_connect: f64,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self {
            input_size: 64,
            num_classes: 4,
            stem_width: 16,
            widths: vec![32, 64, 128, 256],
            drop_connect: 0.2,
        }
    }
}

impl ClassifierSpec {
    pub fn validate(&self) -> Result<()> {
        check_widths(&self.widths, "classifier")?;
        check_size(self.input_size, self.widths.len() + 1, "classifier")?;
        if self.num_classes < 2 || self.stem_width == 0 {
            return Err(NetError::InvalidSpec(
                "classifier needs at least 2 classes".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.drop_connect) {
            return Err(NetError::InvalidSpec(format!(
                "drop-connect rate {} outside [0, 1]",
                self.drop_connect
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> Vec<ParamShape> {
        let mut out = conv("stem", self.stem_width, 3, 3).to_vec();
        let mut prev = self.stem_width;
        for (i, &w) in self.widths.iter().enumerate() {
            out.extend(conv(&format!("blocks.{i}.down"), w, prev, 3));
            out.extend(conv(&format!("blocks.{i}.conv"), w, w, 3));
            prev = w;
        }
        out.extend(linear("head", self.num_classes, prev));
        out
    }

    pub fn param_count(&self) -> usize {
        let s = self.stem_width;
        let mut n = 27 * s + s;
        let mut prev = s;
        for &w in &self.widths {
            n += 9 * w * prev + w + 9 * w * w + w;
            prev = w;
        }
        n + (prev + 1) * self.num_classes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub input_size: usize,
    pub channels: usize,
    /// Encoder widths; the decoder mirrors them.
    pub widths: Vec<usize>,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            input_size: 64,
            channels: 3,
            widths: vec![32, 64, 128, 256],
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        check_widths(&self.widths, "generator")?;
        check_size(self.input_size, self.widths.len(), "generator")?;
        if self.channels == 0 {
            return Err(NetError::InvalidSpec(
                "generator needs at least one channel".into(),
            ));
        }
        Ok(())
    }

    pub fn layout(&self) -> Vec<ParamShape> {
        let w = &self.widths;
        let n = w.len();
        let mut out = Vec::new();
        let mut prev = self.channels;
        for (i, &wi) in w.iter().enumerate() {
            out.extend(conv(&format!("enc.{i}"), wi, prev, 4));
            prev = wi;
        }
        // dec.0 upsamples the bottleneck; later levels see [upsampled, skip]
        for j in 0..n {
            let cin = if j == 0 { w[n - 1] } else { 2 * w[n - 1 - j] };
            let cout = if j + 1 == n {
                self.channels
            } else {
                w[n - 2 - j]
            };
            out.extend(conv_t(&format!("dec.{j}"), cin, cout, 4));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        let w = &self.widths;
        let n = w.len();
        let c = self.channels;
        let enc: usize = (0..n)
            .map(|i| 16 * w[i] * if i == 0 { c } else { w[i - 1] } + w[i])
            .sum();
        let mut dec =
            16 * w[n - 1] * if n == 1 { c } else { w[n - 2] } + if n == 1 { c } else { w[n - 2] };
        for j in 1..n {
            let cin = 2 * w[n - 1 - j];
            let cout = if j + 1 == n { c } else { w[n - 2 - j] };
            dec += 16 * cin * cout + cout;
        }
        enc + dec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorSpec {
    pub input_size: usize,
    /// Channels per image; the network sees condition and candidate stacked.
    pub channels: usize,
    pub widths: Vec<usize>,
    pub head_kernel: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            input_size: 64,
            channels: 3,
            widths: vec![32, 64, 128],
            head_kernel: 3,
        }
    }
}

impl DiscriminatorSpec {
    pub fn validate(&self) -> Result<()> {
        check_widths(&self.widths, "discriminator")?;
        check_size(self.input_size, self.widths.len(), "discriminator")?;
        if self.head_kernel == 0 || self.input_size >> self.widths.len() < self.head_kernel {
            return Err(NetError::InvalidSpec(
                "discriminator head kernel larger than its feature map".into(),
            ));
        }
        Ok(())
    }

    /// Side length of the patch score map.
    pub fn output_size(&self) -> usize {
        (self.input_size >> self.widths.len()) + 1 - self.head_kernel
    }

    pub fn layout(&self) -> Vec<ParamShape> {
        let mut out = Vec::new();
        let mut prev = 2 * self.channels;
        for (i, &w) in self.widths.iter().enumerate() {
            out.extend(conv(&format!("conv.{i}"), w, prev, 4));
            prev = w;
        }
        out.extend(conv("head", 1, prev, self.head_kernel));
        out
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        let mut prev = 2 * self.channels;
        for &w in &self.widths {
            n += 16 * prev * w + w;
            prev = w;
        }
        n + self.head_kernel * self.head_kernel * prev + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressorSpec {
    pub input_size: usize,
    pub stem_width: usize,
    pub widths: Vec<usize>,
    /// Depthwise stride of each block.
    pub strides: Vec<usize>,
    pub expand: usize,
}

impl Default for RegressorSpec {
    fn default() -> Self {
        Self {
            input_size: 64,
            stem_width: 16,
            widths: vec![24, 48, 96, 160],
            strides: vec![2, 2, 2, 2],
            expand: 4,
        }
    }
}

pub const POSE_OUTPUTS: usize = 7;

impl RegressorSpec {
    pub fn validate(&self) -> Result<()> {
        check_widths(&self.widths, "regressor")?;
        if self.strides.len() != self.widths.len()
            || self.strides.iter().any(|s| *s != 1 && *s != 2)
        {
            return Err(NetError::InvalidSpec(
                "regressor needs one stride (1 or 2) per block".into(),
            ));
        }
        let halvings = 1 + self.strides.iter().filter(|s| **s == 2).count();
        check_size(self.input_size, halvings, "regressor")?;
        if self.stem_width == 0 || self.expand == 0 {
            return Err(NetError::InvalidSpec(
                "regressor stem width and expansion must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Whether block `i` adds its input back (stride 1, equal widths).
    pub fn has_residual(&self, i: usize) -> bool {
        let cin = if i == 0 {
            self.stem_width
        } else {
            self.widths[i - 1]
        };
        self.strides[i] == 1 && cin == self.widths[i]
    }

    pub fn layout(&self) -> Vec<ParamShape> {
        let mut out = conv("stem", self.stem_width, 3, 3).to_vec();
        let mut prev = self.stem_width;
        for (i, &w) in self.widths.iter().enumerate() {
            let e = prev * self.expand;
            out.extend(conv(&format!("blocks.{i}.expand"), e, prev, 1));
            out.extend(depthwise(&format!("blocks.{i}.dw"), e));
            out.extend(conv(&format!("blocks.{i}.project"), w, e, 1));
            prev = w;
        }
        out.extend(linear("head", POSE_OUTPUTS, prev));
        out
    }

    pub fn param_count(&self) -> usize {
        let s = self.stem_width;
        let mut n = 28 * s;
        let mut prev = s;
        for &w in &self.widths {
            let e = prev * self.expand;
            n += (prev + 1) * e + 10 * e + (e + 1) * w;
            prev = w;
        }
        n + (prev + 1) * POSE_OUTPUTS
    }
}
