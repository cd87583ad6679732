//! Geometry, procedural scene synthesis and dataset storage for an
//! RGB-to-point-cloud indoor localization pipeline.

// `!(x >= 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod geometry;
pub mod synth;
