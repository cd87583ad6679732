//! Pose and quaternion math, the pose regression loss, position
//! normalization and evaluation metrics. Everything here is `f64`.

mod bounds;
mod loss;
mod metrics;
mod pose;
mod quaternion;

pub use bounds::{SceneBounds, RANGE_TOLERANCE};
pub use loss::{
    pose_loss, pose_loss_gradient, pose_loss_terms, PoseLossSpec, PoseLossTerms, DEFAULT_BETA,
};
pub use metrics::{PoseErrorAccumulator, PoseErrorSummary};
pub use pose::{Pose, PoseVector, WORLD_UP};
pub use quaternion::{quat_error, Quaternion, MIN_QUATERNION_NORM};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate quaternion (norm {norm:e})")]
    DegenerateQuaternion { norm: f64 },
    #[error("degenerate direction or rotation axis")]
    DegenerateAxis,
    #[error("invalid loss spec: beta must be positive and finite, got {beta}")]
    InvalidLossSpec { beta: f64 },
    #[error("scene bounds must have max > min on every axis")]
    InvalidBounds,
    #[error("value {value:?} outside the allowed range")]
    OutOfRange { value: [f64; 3] },
}

#[cfg(test)]
mod proptests {
    use super::*;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn quat() -> impl Strategy<Value = Quaternion> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(w, x, y, z)| {
                w * w + x * x + y * y + z * z > 1e-6
            })
            .prop_map(|(w, x, y, z)| Quaternion::new(w, x, y, z))
    }

    fn pose_vec() -> impl Strategy<Value = PoseVector> {
        prop::array::uniform7(-2.0..2.0f64).prop_map(PoseVector)
    }

    proptest! {
        #[test]
        fn normalize_is_unit_and_idempotent(q in quat()) {
            let n = q.normalize().unwrap();
            prop_assert!((n.norm() - 1.0).abs() < 1e-9);
            prop_assert_eq!(n.normalize().unwrap(), n);
            // direction preserved
            prop_assert!(n.dot(&q) > 0.0);
        }

        #[test]
        fn quat_error_symmetries(a in quat(), b in quat()) {
            let e = quat_error(&a, &b).unwrap();
            prop_assert_eq!(e, quat_error(&b, &a).unwrap());
            prop_assert!((e - quat_error(&-a, &b).unwrap()).abs() < 1e-15);
            prop_assert!((0.0..=2f64.sqrt() + 1e-12).contains(&e));
        }

        #[test]
        fn loss_is_nonnegative_and_beta_scales_orientation(p in pose_vec(), t in pose_vec(), beta in 0.1..1000.0f64) {
            prop_assume!(t.quaternion().norm() > 1e-3);
            let s1 = PoseLossSpec::new(beta).unwrap();
            let s2 = PoseLossSpec::new(2.0 * beta).unwrap();
            let l1 = pose_loss(&p, &t, &s1).unwrap();
            let l2 = pose_loss(&p, &t, &s2).unwrap();
            prop_assert!(l1 >= 0.0);
            let pos = pose_loss_terms(&p, &t, &s1).unwrap().position;
            prop_assert!(((l2 - pos) - 0.5 * (l1 - pos)).abs() <= 1e-12 * (1.0 + l1));
        }

        #[test]
        fn bounds_round_trip(
            lo in prop::array::uniform3(-50.0..50.0f64),
            ext in prop::array::uniform3(0.01..30.0f64),
            f in prop::array::uniform3(0.0..=1.0f64),
        ) {
            let min = Vector3::from(lo);
            let max = min + Vector3::from(ext);
            let b = SceneBounds::new(min, max).unwrap();
            let p = Vector3::from_fn(|i, _| min[i] + f[i] * ext[i]);
            let u = b.normalize_position(&p).unwrap();
            prop_assert!(u.iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
            let back = b.denormalize_position(&u).unwrap();
            prop_assert!((back - p).amax() <= 1e-9);
        }
    }
}
