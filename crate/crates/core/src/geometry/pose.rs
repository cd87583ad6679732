use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{GeometryError, Quaternion};

/// World vertical axis. Rooms are laid out with `z` up.
pub const WORLD_UP: Vector3<f64> = Vector3::new(0.0, 0.0, 1.0);

/// Camera pose: position in meters and world-from-camera orientation.
///
/// The camera frame is `x` right, `y` down, `z` forward (optical axis).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vector3<f64>,
    orientation: Quaternion,
}

impl Pose {
    /// The orientation is normalized on construction.
    pub fn new(position: Vector3<f64>, orientation: Quaternion) -> Result<Self, GeometryError> {
        Ok(Self {
            position,
            orientation: orientation.normalize()?,
        })
    }

    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: Quaternion::IDENTITY,
        }
    }

    pub fn orientation(&self) -> Quaternion {
        self.orientation
    }

    /// Camera at `eye` with its optical axis through `target`, image-up
    /// aligned with world up as far as possible.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Result<Self, GeometryError> {
        let forward = target - eye;
        let n = forward.norm();
        if n < 1e-12 {
            return Err(GeometryError::DegenerateAxis);
        }
        Self::from_forward(eye, forward / n)
    }

    /// Camera heading `yaw` radians counter-clockwise from world `+x` in the
    /// horizontal plane, tilted up by `pitch` radians.
    pub fn from_yaw_pitch(
        position: Vector3<f64>,
        yaw: f64,
        pitch: f64,
    ) -> Result<Self, GeometryError> {
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        Self::from_forward(position, Vector3::new(cp * cy, cp * sy, sp))
    }

    fn from_forward(position: Vector3<f64>, forward: Vector3<f64>) -> Result<Self, GeometryError> {
        let right = forward.cross(&WORLD_UP);
        let rn = right.norm();
        if rn < 1e-9 {
            // Looking straight up or down.
            return Err(GeometryError::DegenerateAxis);
        }
        let right = right / rn;
        let down = forward.cross(&right);
        let orientation = Quaternion::from_frame(&right, &down, &forward);
        Ok(Self {
            position,
            orientation,
        })
    }

    /// Unit optical axis in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.orientation.rotate(&Vector3::z())
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.rotate(p) + self.position
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.conjugate().rotate(&(p - self.position))
    }

    /// `[x, y, z, w, qx, qy, qz]`, the regressor output layout.
    pub fn to_vector(&self) -> PoseVector {
        PoseVector::from_parts(self.position, self.orientation)
    }
}

/// Raw 7-value pose `[x, y, z, w, qx, qy, qz]`. The quaternion slice is not
/// required to be unit length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseVector(pub [f64; 7]);

impl PoseVector {
    pub fn from_parts(position: Vector3<f64>, q: Quaternion) -> Self {
        Self([position.x, position.y, position.z, q.w, q.x, q.y, q.z])
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn quaternion(&self) -> Quaternion {
        Quaternion::new(self.0[3], self.0[4], self.0[5], self.0[6])
    }

    /// Normalizes the quaternion slice.
    pub fn to_pose(&self) -> Result<Pose, GeometryError> {
        Pose::new(self.position(), self.quaternion())
    }
}

impl From<[f64; 7]> for PoseVector {
    fn from(v: [f64; 7]) -> Self {
        Self(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn look_at_points_forward_at_target() {
        let eye = Vector3::new(1.0, 2.0, 1.5);
        let target = Vector3::new(4.0, -1.0, 1.0);
        let pose = Pose::look_at(eye, target).unwrap();
        let dir = (target - eye).normalize();
        assert_relative_eq!(pose.forward(), dir, epsilon = 1e-12);
        // image-down points towards world down
        let down = pose.orientation().rotate(&Vector3::y());
        assert!(down.z < 0.0);
        assert!(pose.orientation().is_unit(1e-12));
    }

    #[test]
    fn yaw_pitch_axes() {
        let p = Pose::from_yaw_pitch(Vector3::zeros(), 0.0, 0.0).unwrap();
        assert_relative_eq!(p.forward(), Vector3::x(), epsilon = 1e-12);
        // facing +x with z up, camera right is world -y
        assert_relative_eq!(
            p.orientation().rotate(&Vector3::x()),
            -Vector3::y(),
            epsilon = 1e-12
        );
        let p = Pose::from_yaw_pitch(Vector3::zeros(), std::f64::consts::FRAC_PI_2, 0.2).unwrap();
        assert!(p.forward().y > 0.9 && p.forward().z > 0.0);
        assert!(Pose::from_yaw_pitch(Vector3::zeros(), 0.0, std::f64::consts::FRAC_PI_2).is_err());
    }

    #[test]
    fn camera_world_round_trip() {
        let pose = Pose::look_at(Vector3::new(1.0, 1.0, 1.0), Vector3::new(3.0, 2.0, 0.0)).unwrap();
        let p = Vector3::new(0.3, -2.0, 5.0);
        assert_relative_eq!(
            pose.camera_to_world(&pose.world_to_camera(&p)),
            p,
            epsilon = 1e-12
        );
    }

    #[test]
    fn constructor_normalizes() {
        let pose = Pose::new(Vector3::zeros(), Quaternion::new(2.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(pose.orientation(), Quaternion::IDENTITY);
        assert!(Pose::new(Vector3::zeros(), Quaternion::new(0.0, 0.0, 0.0, 0.0)).is_err());
    }
}
