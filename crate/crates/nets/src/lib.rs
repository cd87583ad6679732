//! Desk-scale networks for the three pipeline stages, built on candle:
//!
//! - [`Classifier`]: RGB image to scene distribution (swish, drop-connect residuals).
//! - [`Generator`] / [`Discriminator`]: U-Net conditional GAN translating RGB to
//!   point-cloud images and back.
//! - [`Regressor`]: point-cloud image to a raw 7-vector pose (inverted residual blocks).
//!
//! All parameters are Xavier-uniform initialized from a seed. Value ranges:
//! classifier and regressor inputs are in `[0, 1]`, translator inputs and
//! outputs in `[-1, 1]`; see [`convert`].

// `!(x >= 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
mod classifier;
pub mod convert;
mod error;
pub mod layers;
mod ops;
mod params;
mod regressor;
mod spec;
pub mod train;
mod translator;

pub use checkpoint::{CheckpointMeta, ModelKind, CHECKPOINT_VERSION};
pub use classifier::Classifier;
pub use error::NetError;
pub use params::{xavier_bound, Fan, ParamSet, ParamShape};
pub use regressor::{decode_pose, Regressor};
pub use spec::{ClassifierSpec, DiscriminatorSpec, GeneratorSpec, RegressorSpec};
pub use translator::{Direction, Discriminator, Generator};

use rand_chacha::ChaCha8Rng;

pub type Result<T> = std::result::Result<T, NetError>;

/// Forward-pass mode. Stochastic layers draw from the supplied generator in
/// training mode and are disabled in evaluation mode.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Checks an NCHW batch against the expected channel count and square size;
/// returns the batch size.
pub(crate) fn check_input(x: &candle_core::Tensor, channels: usize, size: usize) -> Result<usize> {
    match x.dims() {
        &[b, c, h, w] if c == channels && h == size && w == size && b > 0 => Ok(b),
        dims => Err(NetError::Shape {
            expected: vec![0, channels, size, size],
            got: dims.to_vec(),
        }),
    }
}
