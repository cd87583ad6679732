//! Camera movement regimes used to sample each scene.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mix_seed, SynthError};
use crate::geometry::{Pose, SceneBounds, RANGE_TOLERANCE};

const JITTER_MAX_TRIES: usize = 10_000;
const ORBIT_STREAM: u64 = 1;
const JITTER_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeKind {
    LateralSweep,
    Orbit,
    Jitter,
}

impl RegimeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegimeKind::LateralSweep => "lateral-sweep",
            RegimeKind::Orbit => "orbit",
            RegimeKind::Jitter => "jitter",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrajectoryRegime {
    /// Serpentine walk over horizontal rows in the near half of the room at
    /// a fixed height, facing the far (`+y`) wall. Consecutive poses step
    /// through `yaw_steps` headings spread over `yaw_range_deg`.
    LateralSweep {
        height: f64,
        rows: usize,
        margin: f64,
        yaw_range_deg: f64,
        yaw_steps: usize,
    },
    /// Evenly spaced poses on a horizontal circle around the room center,
    /// each looking at the center.
    Orbit { height: f64, radius: f64 },
    /// Uniform positions in the central `inner_fraction` of the room with a
    /// uniform heading and a small pitch.
    Jitter {
        inner_fraction: f64,
        max_pitch_deg: f64,
    },
}

impl TrajectoryRegime {
    pub fn default_sweep() -> Self {
        TrajectoryRegime::LateralSweep {
            height: 1.6,
            rows: 3,
            margin: 0.8,
            yaw_range_deg: 60.0,
            yaw_steps: 5,
        }
    }

    pub fn default_orbit() -> Self {
        TrajectoryRegime::Orbit {
            height: 1.5,
            radius: 1.8,
        }
    }

    pub fn default_jitter() -> Self {
        TrajectoryRegime::Jitter {
            inner_fraction: 0.8,
            max_pitch_deg: 10.0,
        }
    }

    pub fn kind(&self) -> RegimeKind {
        match self {
            TrajectoryRegime::LateralSweep { .. } => RegimeKind::LateralSweep,
            TrajectoryRegime::Orbit { .. } => RegimeKind::Orbit,
            TrajectoryRegime::Jitter { .. } => RegimeKind::Jitter,
        }
    }
}

pub fn sample_trajectory(
    regime: &TrajectoryRegime,
    bounds: &SceneBounds,
    n: usize,
    seed: u64,
) -> Result<Vec<Pose>, SynthError> {
    sample_trajectory_avoiding(regime, bounds, n, seed, &[])
}

/// Like [`sample_trajectory`]; jitter positions are additionally rejected
/// inside any of the `keep_out` volumes.
pub fn sample_trajectory_avoiding(
    regime: &TrajectoryRegime,
    bounds: &SceneBounds,
    n: usize,
    seed: u64,
    keep_out: &[SceneBounds],
) -> Result<Vec<Pose>, SynthError> {
    let poses = match *regime {
        TrajectoryRegime::LateralSweep {
            height,
            rows,
            margin,
            yaw_range_deg,
            yaw_steps,
        } => lateral_sweep(
            bounds,
            n,
            height,
            rows,
            margin,
            yaw_range_deg.to_radians(),
            yaw_steps,
        )?,
        TrajectoryRegime::Orbit { height, radius } => orbit(bounds, n, height, radius, seed)?,
        TrajectoryRegime::Jitter {
            inner_fraction,
            max_pitch_deg,
        } => jitter(
            bounds,
            n,
            inner_fraction,
            max_pitch_deg.to_radians(),
            seed,
            keep_out,
        )?,
    };
    debug_assert!(poses
        .iter()
        .all(|p| bounds.contains(&p.position, RANGE_TOLERANCE)));
    Ok(poses)
}

fn check_height(bounds: &SceneBounds, height: f64) -> Result<f64, SynthError> {
    let z = bounds.min_corner().z + height;
    if !(height > 0.0 && z < bounds.max_corner().z) {
        return Err(SynthError::OutOfBounds(format!(
            "camera height {height} m outside the room"
        )));
    }
    Ok(z)
}

fn lateral_sweep(
    bounds: &SceneBounds,
    n: usize,
    height: f64,
    rows: usize,
    margin: f64,
    yaw_range: f64,
    yaw_steps: usize,
) -> Result<Vec<Pose>, SynthError> {
    if rows == 0 || yaw_steps == 0 || !(margin >= 0.0) || !(0.0..PI).contains(&yaw_range) {
        return Err(SynthError::Config(
            "sweep needs rows, yaw_steps >= 1, margin >= 0, yaw range in [0, 180)".into(),
        ));
    }
    let z = check_height(bounds, height)?;
    let (lo, hi) = (bounds.min_corner(), bounds.max_corner());
    let (x0, x1) = (lo.x + margin, hi.x - margin);
    let (y0, y1) = (lo.y + margin, bounds.center().y);
    if !(x1 > x0 && y1 >= y0) {
        return Err(SynthError::OutOfBounds(format!(
            "sweep margin {margin} m leaves no room to move"
        )));
    }
    let row_len = x1 - x0;
    let row_gap = if rows > 1 {
        (y1 - y0) / (rows - 1) as f64
    } else {
        0.0
    };
    let total = rows as f64 * row_len + (rows - 1) as f64 * row_gap;
    let mut poses = Vec::with_capacity(n);
    for i in 0..n {
        let s = (i as f64 + 0.5) / n as f64 * total;
        let seg = row_len + row_gap;
        let row = ((s / seg).floor() as usize).min(rows - 1);
        let local = s - row as f64 * seg;
        let (x, y) = if local <= row_len {
            let along = if row.is_multiple_of(2) {
                x0 + local
            } else {
                x1 - local
            };
            (along, y0 + row as f64 * row_gap)
        } else {
            // connector between rows
            let end = if row.is_multiple_of(2) { x1 } else { x0 };
            (end, y0 + row as f64 * row_gap + (local - row_len))
        };
        let k = i % yaw_steps;
        let offset = if yaw_steps > 1 {
            yaw_range * (k as f64 / (yaw_steps - 1) as f64 - 0.5)
        } else {
            0.0
        };
        poses.push(Pose::from_yaw_pitch(
            Vector3::new(x, y, z),
            FRAC_PI_2 + offset,
            0.0,
        )?);
    }
    Ok(poses)
}

fn orbit(
    bounds: &SceneBounds,
    n: usize,
    height: f64,
    radius: f64,
    seed: u64,
) -> Result<Vec<Pose>, SynthError> {
    let z = check_height(bounds, height)?;
    let c = bounds.center();
    let (lo, hi) = (bounds.min_corner(), bounds.max_corner());
    if !(radius > 0.0
        && c.x - radius > lo.x
        && c.x + radius < hi.x
        && c.y - radius > lo.y
        && c.y + radius < hi.y)
    {
        return Err(SynthError::OutOfBounds(format!(
            "orbit radius {radius} m does not fit the room"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, ORBIT_STREAM));
    let phase = rng.random_range(0.0..2.0 * PI);
    (0..n)
        .map(|i| {
            let a = phase + 2.0 * PI * i as f64 / n as f64;
            let eye = Vector3::new(c.x + radius * a.cos(), c.y + radius * a.sin(), z);
            Pose::look_at(eye, c).map_err(SynthError::from)
        })
        .collect()
}

fn jitter(
    bounds: &SceneBounds,
    n: usize,
    inner_fraction: f64,
    max_pitch: f64,
    seed: u64,
    keep_out: &[SceneBounds],
) -> Result<Vec<Pose>, SynthError> {
    if !(inner_fraction > 0.0 && inner_fraction <= 1.0) || !(0.0..FRAC_PI_2).contains(&max_pitch) {
        return Err(SynthError::Config(
            "jitter needs inner_fraction in (0, 1] and pitch below 90 degrees".into(),
        ));
    }
    let inner = bounds.scaled_about_center(inner_fraction)?;
    let (lo, hi) = (inner.min_corner(), inner.max_corner());
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, JITTER_STREAM));
    let mut poses = Vec::with_capacity(n);
    for _ in 0..n {
        let mut found = None;
        for _ in 0..JITTER_MAX_TRIES {
            let p = Vector3::new(
                rng.random_range(lo.x..=hi.x),
                rng.random_range(lo.y..=hi.y),
                rng.random_range(lo.z..=hi.z),
            );
            if !keep_out.iter().any(|k| k.contains(&p, 0.0)) {
                found = Some(p);
                break;
            }
        }
        let p = found.ok_or_else(|| {
            SynthError::OutOfBounds("keep-out volumes cover the jitter region".into())
        })?;
        let yaw = rng.random_range(-PI..PI);
        let pitch = if max_pitch > 0.0 {
            rng.random_range(-max_pitch..max_pitch)
        } else {
            0.0
        };
        poses.push(Pose::from_yaw_pitch(p, yaw, pitch)?);
    }
    Ok(poses)
}
