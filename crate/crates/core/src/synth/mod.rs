//! Procedural indoor scenes, camera trajectories and paired RGB /
//! point-cloud rendering.

mod generate;
mod mesh;
mod raster;
mod scene;
mod trajectory;

pub use generate::{DatasetGenerator, SamplePair, SceneAssets};
pub use mesh::{subdivide_mesh, Rgb, TriMesh, DEFAULT_VERTEX_CAP, DEGENERATE_AREA};
pub use raster::{
    light_direction, rasterize_surfaces, render_pointcloud, render_rgb, splat_points,
    CameraIntrinsics, PairRenderer, SurfaceBuffer, AMBIENT, DIFFUSE, POINT_DEPTH_BIAS,
    SUBPIXEL_BITS,
};
pub use scene::{build_scene, hsv_to_rgb, mesh_from_spec, ObjectKind, SceneObject, SceneSpec};
pub use trajectory::{sample_trajectory, sample_trajectory_avoiding, RegimeKind, TrajectoryRegime};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("scene id {scene_id} out of range for {num_scenes} scenes")]
    SceneOutOfRange { scene_id: usize, num_scenes: usize },
    #[error("subdivision would create {projected} vertices, cap is {cap}")]
    Capacity { projected: usize, cap: usize },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("trajectory leaves the scene bounds: {0}")]
    OutOfBounds(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Share of each scene's samples drawn from one trajectory regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeShare {
    pub regime: TrajectoryRegime,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_scenes: usize,
    pub seed: u64,
    pub samples_per_scene: usize,
    /// Room size ranges in meters, `[x, y, z]`.
    pub room_min: [f64; 3],
    pub room_max: [f64; 3],
    pub min_objects: usize,
    pub max_objects: usize,
    pub intrinsics: CameraIntrinsics,
    /// Longest edge after subdivision for point renders, meters.
    pub max_edge: f64,
    pub vertex_cap: usize,
    pub regimes: Vec<RegimeShare>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_scenes: 4,
            seed: 7,
            samples_per_scene: 600,
            room_min: [6.0, 5.0, 2.6],
            room_max: [10.0, 9.0, 3.4],
            min_objects: 3,
            max_objects: 8,
            intrinsics: CameraIntrinsics::default(),
            max_edge: 0.2,
            vertex_cap: DEFAULT_VERTEX_CAP,
            regimes: vec![
                RegimeShare {
                    regime: TrajectoryRegime::default_sweep(),
                    fraction: 0.4,
                },
                RegimeShare {
                    regime: TrajectoryRegime::default_orbit(),
                    fraction: 0.3,
                },
                RegimeShare {
                    regime: TrajectoryRegime::default_jitter(),
                    fraction: 0.3,
                },
            ],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.num_scenes < 2 {
            return Err(SynthError::Config(format!(
                "need at least 2 scenes, got {}",
                self.num_scenes
            )));
        }
        for i in 0..3 {
            if !(self.room_min[i] > 0.0 && self.room_max[i] >= self.room_min[i]) {
                return Err(SynthError::Config(
                    "room size ranges must be positive and ordered".into(),
                ));
            }
        }
        if self.min_objects > self.max_objects {
            return Err(SynthError::Config("min_objects exceeds max_objects".into()));
        }
        self.intrinsics.validate()?;
        if !(self.max_edge > 0.0) {
            return Err(SynthError::Config("max_edge must be positive".into()));
        }
        if self.regimes.is_empty() || self.regimes.iter().any(|r| !(r.fraction >= 0.0)) {
            return Err(SynthError::Config(
                "regimes need non-negative fractions".into(),
            ));
        }
        let total: f64 = self.regimes.iter().map(|r| r.fraction).sum();
        if !(total > 0.0) {
            return Err(SynthError::Config("regime fractions sum to zero".into()));
        }
        Ok(())
    }

    /// Number of samples per regime for one scene: largest-remainder
    /// apportionment of `samples_per_scene`, ties to the earlier regime.
    pub fn regime_counts(&self) -> Vec<usize> {
        let total: f64 = self.regimes.iter().map(|r| r.fraction).sum();
        let n = self.samples_per_scene;
        let quotas: Vec<f64> = self
            .regimes
            .iter()
            .map(|r| r.fraction / total * n as f64)
            .collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut left = n - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..quotas.len()).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        counts
    }
}

/// SplitMix64 finalizer; mixes seeds and indices into independent streams.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
