use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Tolerance for range checks on positions, in the respective units.
pub const RANGE_TOLERANCE: f64 = 1e-9;

/// Axis-aligned scene volume. Positions are stored normalized to `[-1, 1]³`
/// relative to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    min_corner: Vector3<f64>,
    max_corner: Vector3<f64>,
}

impl SceneBounds {
    pub fn new(min_corner: Vector3<f64>, max_corner: Vector3<f64>) -> Result<Self, GeometryError> {
        let ok = (0..3).all(|i| {
            min_corner[i].is_finite() && max_corner[i].is_finite() && max_corner[i] > min_corner[i]
        });
        if !ok {
            return Err(GeometryError::InvalidBounds);
        }
        Ok(Self {
            min_corner,
            max_corner,
        })
    }

    pub fn min_corner(&self) -> Vector3<f64> {
        self.min_corner
    }

    pub fn max_corner(&self) -> Vector3<f64> {
        self.max_corner
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min_corner + self.max_corner) * 0.5
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max_corner - self.min_corner
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn contains(&self, p: &Vector3<f64>, tol: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min_corner[i] - tol && p[i] <= self.max_corner[i] + tol)
    }

    /// Bounds grown by `fraction` of the extent on every side.
    pub fn expanded(&self, fraction: f64) -> Self {
        let pad = self.extent() * fraction;
        Self {
            min_corner: self.min_corner - pad,
            max_corner: self.max_corner + pad,
        }
    }

    /// Bounds shrunk about the center to `fraction` of the extent.
    pub fn scaled_about_center(&self, fraction: f64) -> Result<Self, GeometryError> {
        let c = self.center();
        let half = self.extent() * (0.5 * fraction);
        Self::new(c - half, c + half)
    }

    pub fn normalize_position(&self, p: &Vector3<f64>) -> Result<Vector3<f64>, GeometryError> {
        if !self.contains(p, RANGE_TOLERANCE) {
            return Err(GeometryError::OutOfRange {
                value: [p.x, p.y, p.z],
            });
        }
        let e = self.extent();
        Ok(Vector3::from_fn(|i, _| {
            2.0 * (p[i] - self.min_corner[i]) / e[i] - 1.0
        }))
    }

    pub fn denormalize_position(&self, u: &Vector3<f64>) -> Result<Vector3<f64>, GeometryError> {
        if !(0..3).all(|i| u[i] >= -1.0 - RANGE_TOLERANCE && u[i] <= 1.0 + RANGE_TOLERANCE) {
            return Err(GeometryError::OutOfRange {
                value: [u.x, u.y, u.z],
            });
        }
        Ok(self.denormalize_position_unchecked(u))
    }

    /// Affine inverse without the range check; used for raw network
    /// predictions, which may land outside `[-1, 1]`.
    pub fn denormalize_position_unchecked(&self, u: &Vector3<f64>) -> Vector3<f64> {
        let e = self.extent();
        Vector3::from_fn(|i, _| self.min_corner[i] + (u[i] + 1.0) * 0.5 * e[i])
    }
}
