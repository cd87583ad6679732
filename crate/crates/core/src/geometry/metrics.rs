use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{quat_error, GeometryError, Quaternion};

/// Mean absolute per-axis position error (meters) and mean quaternion
/// distance over a set of predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseErrorSummary {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Mean Euclidean position error in meters.
    pub position: f64,
    pub quaternion: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Default)]
pub struct PoseErrorAccumulator {
    abs_sum: Vector3<f64>,
    euclid_sum: f64,
    quat_sum: f64,
    count: usize,
}

impl PoseErrorAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        predicted: (&Vector3<f64>, &Quaternion),
        truth: (&Vector3<f64>, &Quaternion),
    ) -> Result<(), GeometryError> {
        let qe = quat_error(predicted.1, truth.1)?;
        let d = predicted.0 - truth.0;
        self.abs_sum += d.abs();
        self.euclid_sum += d.norm();
        self.quat_sum += qe;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `None` when nothing was pushed.
    pub fn summary(&self) -> Option<PoseErrorSummary> {
        if self.count == 0 {
            return None;
        }
        let n = self.count as f64;
        Some(PoseErrorSummary {
            x: self.abs_sum.x / n,
            y: self.abs_sum.y / n,
            z: self.abs_sum.z / n,
            position: self.euclid_sum / n,
            quaternion: self.quat_sum / n,
            count: self.count,
        })
    }
}
