use std::ops::{Mul, Neg};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Norms below this are treated as degenerate.
pub const MIN_QUATERNION_NORM: f64 = 1e-12;

/// Squared-norm slack under which a quaternion is already considered unit.
/// Keeps `normalize` bitwise idempotent.
const UNIT_NORM_SQ_SLACK: f64 = 1e-14;

/// Rotation quaternion in `(w, x, y, z)` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Self, GeometryError> {
        let n = axis.norm();
        if n < MIN_QUATERNION_NORM {
            return Err(GeometryError::DegenerateAxis);
        }
        let (s, c) = (angle * 0.5).sin_cos();
        let a = axis / n;
        Ok(Self::new(c, a.x * s, a.y * s, a.z * s))
    }

    pub fn norm_squared(&self) -> f64 {
        self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }

    /// Scales to unit length. Already-unit inputs are returned untouched so
    /// that `q.normalize()?.normalize()?` is bit-identical to `q.normalize()?`.
    pub fn normalize(&self) -> Result<Self, GeometryError> {
        let n2 = self.norm_squared();
        if !n2.is_finite() || n2.sqrt() <= MIN_QUATERNION_NORM {
            return Err(GeometryError::DegenerateQuaternion { norm: n2.sqrt() });
        }
        if (n2 - 1.0).abs() <= UNIT_NORM_SQ_SLACK {
            return Ok(*self);
        }
        let n = n2.sqrt();
        Ok(Self::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Picks the representative with `w >= 0` (ties broken on the first
    /// non-zero vector component).
    pub fn canonical(&self) -> Self {
        let flip = if self.w != 0.0 {
            self.w < 0.0
        } else if self.x != 0.0 {
            self.x < 0.0
        } else if self.y != 0.0 {
            self.y < 0.0
        } else {
            self.z < 0.0
        };
        if flip {
            -*self
        } else {
            *self
        }
    }

    /// Rotates `v` by this quaternion, assumed unit.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let u = Vector3::new(self.x, self.y, self.z);
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    /// Builds the unit quaternion whose rotation maps the standard basis
    /// onto the orthonormal right-handed frame `(c0, c1, c2)`.
    pub(crate) fn from_frame(c0: &Vector3<f64>, c1: &Vector3<f64>, c2: &Vector3<f64>) -> Self {
        // Shepperd's method on the matrix with columns c0, c1, c2.
        let (m00, m01, m02) = (c0.x, c1.x, c2.x);
        let (m10, m11, m12) = (c0.y, c1.y, c2.y);
        let (m20, m21, m22) = (c0.z, c1.z, c2.z);
        let trace = m00 + m11 + m22;
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Self::new(0.25 * s, (m21 - m12) / s, (m02 - m20) / s, (m10 - m01) / s)
        } else if m00 > m11 && m00 > m22 {
            let s = (1.0 + m00 - m11 - m22).sqrt() * 2.0;
            Self::new((m21 - m12) / s, 0.25 * s, (m01 + m10) / s, (m02 + m20) / s)
        } else if m11 > m22 {
            let s = (1.0 + m11 - m00 - m22).sqrt() * 2.0;
            Self::new((m02 - m20) / s, (m01 + m10) / s, 0.25 * s, (m12 + m21) / s)
        } else {
            let s = (1.0 + m22 - m00 - m11).sqrt() * 2.0;
            Self::new((m10 - m01) / s, (m02 + m20) / s, (m12 + m21) / s, 0.25 * s)
        };
        q.normalize()
            .expect("orthonormal frame yields a non-degenerate quaternion")
            .canonical()
    }
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;
    fn neg(self) -> Self::Output {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// Hamilton product.
impl Mul for Quaternion {
    type Output = Quaternion;
    fn mul(self, r: Quaternion) -> Self::Output {
        Self::new(
            self.w * r.w - self.x * r.x - self.y * r.y - self.z * r.z,
            self.w * r.x + self.x * r.w + self.y * r.z - self.z * r.y,
            self.w * r.y - self.x * r.z + self.y * r.w + self.z * r.x,
            self.w * r.z + self.x * r.y - self.y * r.x + self.z * r.w,
        )
    }
}

/// Double-cover-aware distance `min(|â - b̂|, |â + b̂|)` between the
/// normalized inputs. Lies in `[0, √2]`.
pub fn quat_error(a: &Quaternion, b: &Quaternion) -> Result<f64, GeometryError> {
    let a = a.normalize()?;
    let b = b.normalize()?;
    let minus =
        ((a.w - b.w).powi(2) + (a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2))
            .sqrt();
    let plus =
        ((a.w + b.w).powi(2) + (a.x + b.x).powi(2) + (a.y + b.y).powi(2) + (a.z + b.z).powi(2))
            .sqrt();
    Ok(minus.min(plus))
}
