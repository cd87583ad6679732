//! Balanced position / orientation regression loss.
//!
//! `loss = |P - P̂| + (1/β) |Q̂ - Q/|Q||`
//!
//! Only the target quaternion is normalized; the predicted quaternion enters
//! the orientation term as emitted by the regressor.

use serde::{Deserialize, Serialize};

use super::{GeometryError, PoseVector, MIN_QUATERNION_NORM};

pub const DEFAULT_BETA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseLossSpec {
    pub beta: f64,
}

impl PoseLossSpec {
    pub fn new(beta: f64) -> Result<Self, GeometryError> {
        let spec = Self { beta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.beta > 0.0 && self.beta.is_finite() {
            Ok(())
        } else {
            Err(GeometryError::InvalidLossSpec { beta: self.beta })
        }
    }
}

impl Default for PoseLossSpec {
    fn default() -> Self {
        Self { beta: DEFAULT_BETA }
    }
}

/// The two unscaled terms of the loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseLossTerms {
    /// `|P - P̂|`
    pub position: f64,
    /// `|Q̂ - Q/|Q||`, before the `1/β` scaling.
    pub orientation: f64,
}

impl PoseLossTerms {
    pub fn total(&self, spec: &PoseLossSpec) -> f64 {
        self.position + self.orientation / spec.beta
    }
}

fn unit_target(target: &PoseVector) -> Result<[f64; 4], GeometryError> {
    let q = &target.0[3..7];
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !n.is_finite() || n <= MIN_QUATERNION_NORM {
        return Err(GeometryError::DegenerateQuaternion { norm: n });
    }
    Ok([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

pub fn pose_loss_terms(
    pred: &PoseVector,
    target: &PoseVector,
    spec: &PoseLossSpec,
) -> Result<PoseLossTerms, GeometryError> {
    spec.validate()?;
    let tq = unit_target(target)?;
    let position = (0..3)
        .map(|i| (pred.0[i] - target.0[i]).powi(2))
        .sum::<f64>()
        .sqrt();
    let orientation = (0..4)
        .map(|i| (pred.0[3 + i] - tq[i]).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(PoseLossTerms {
        position,
        orientation,
    })
}

pub fn pose_loss(
    pred: &PoseVector,
    target: &PoseVector,
    spec: &PoseLossSpec,
) -> Result<f64, GeometryError> {
    Ok(pose_loss_terms(pred, target, spec)?.total(spec))
}

/// Analytic gradient with respect to the seven predicted values. Where a
/// term's residual is exactly zero its (sub)gradient is taken as zero.
pub fn pose_loss_gradient(
    pred: &PoseVector,
    target: &PoseVector,
    spec: &PoseLossSpec,
) -> Result<[f64; 7], GeometryError> {
    let terms = pose_loss_terms(pred, target, spec)?;
    let tq = unit_target(target)?;
    let mut g = [0.0; 7];
    if terms.position > 0.0 {
        for (gi, (p, t)) in g.iter_mut().zip(pred.0.iter().zip(&target.0)).take(3) {
            *gi = (p - t) / terms.position;
        }
    }
    if terms.orientation > 0.0 {
        let scale = 1.0 / (spec.beta * terms.orientation);
        for i in 0..4 {
            g[3 + i] = (pred.0[3 + i] - tq[i]) * scale;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn perfect_prediction_is_zero() {
        let target = PoseVector([0.1, -0.4, 0.9, 2.0, 0.0, 0.0, 0.0]);
        let pred = PoseVector([0.1, -0.4, 0.9, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(
            pose_loss(&pred, &target, &PoseLossSpec::default()).unwrap(),
            0.0
        );
        assert_eq!(
            pose_loss_gradient(&pred, &target, &PoseLossSpec::default()).unwrap(),
            [0.0; 7]
        );
    }

    #[test]
    fn worked_example() {
        let target = PoseVector([0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let pred = PoseVector([3.0, 4.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let l = pose_loss(&pred, &target, &PoseLossSpec::new(2.0).unwrap()).unwrap();
        assert_relative_eq!(l, 5.0 + 2f64.sqrt() / 2.0, epsilon = 1e-14);
        assert_relative_eq!(l, 5.70711, epsilon = 1e-5);
    }

    #[test]
    fn prediction_quaternion_is_not_normalized() {
        let target = PoseVector([0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let pred = PoseVector([0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0]);
        let t = pose_loss_terms(&pred, &target, &PoseLossSpec::new(1.0).unwrap()).unwrap();
        assert_eq!(t.orientation, 2.0);
    }

    #[test]
    fn error_paths() {
        let pred = PoseVector([0.0; 7]);
        let bad_target = PoseVector([0.0; 7]);
        assert!(matches!(
            pose_loss(&pred, &bad_target, &PoseLossSpec::default()),
            Err(GeometryError::DegenerateQuaternion { .. })
        ));
        let target = PoseVector([0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        for beta in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                pose_loss(&pred, &target, &PoseLossSpec { beta }),
                Err(GeometryError::InvalidLossSpec { .. })
            ));
        }
        assert!(PoseLossSpec::new(0.0).is_err());
    }
}
