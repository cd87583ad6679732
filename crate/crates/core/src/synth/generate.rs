use image::RgbImage;

use super::raster::PairRenderer;
use super::scene::{build_scene, SceneSpec};
use super::trajectory::{sample_trajectory_avoiding, RegimeKind};
use super::{mix_seed, SynthConfig, SynthError, TriMesh};
use crate::geometry::{Pose, SceneBounds};

/// Clearance kept between jitter camera positions and objects, meters.
const OBJECT_KEEP_OUT: f64 = 0.25;

/// One paired training record.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub rgb: RgbImage,
    pub pointcloud: RgbImage,
    /// Position normalized to `[-1, 1]³` by the scene bounds; unit orientation.
    pub pose: Pose,
    pub scene_id: usize,
    pub regime: RegimeKind,
    pub index: usize,
}

/// Everything needed to render one scene.
#[derive(Debug, Clone)]
pub struct SceneAssets {
    pub spec: SceneSpec,
    pub mesh: TriMesh,
    pub bounds: SceneBounds,
    pub renderer: PairRenderer,
}

impl SceneAssets {
    pub fn build(scene_id: usize, config: &SynthConfig) -> Result<Self, SynthError> {
        let (spec, mesh, bounds) = build_scene(scene_id, config.seed, config)?;
        let renderer = PairRenderer::new(
            mesh.clone(),
            config.intrinsics,
            config.max_edge,
            config.vertex_cap,
        )?;
        Ok(Self {
            spec,
            mesh,
            bounds,
            renderer,
        })
    }

    /// Camera poses (meters) for this scene in sample-index order.
    pub fn poses(&self, config: &SynthConfig) -> Result<Vec<(RegimeKind, Pose)>, SynthError> {
        let keep_out = self.spec.keep_out_volumes(OBJECT_KEEP_OUT);
        let mut out = Vec::with_capacity(config.samples_per_scene);
        for (r, (share, count)) in config
            .regimes
            .iter()
            .zip(config.regime_counts())
            .enumerate()
        {
            let seed = mix_seed(mix_seed(config.seed, self.spec.scene_id as u64), r as u64);
            let poses =
                sample_trajectory_avoiding(&share.regime, &self.bounds, count, seed, &keep_out)?;
            out.extend(poses.into_iter().map(|p| (share.regime.kind(), p)));
        }
        Ok(out)
    }

    /// Renders the pair at a metric pose and attaches the normalized label.
    pub fn sample(
        &self,
        index: usize,
        regime: RegimeKind,
        pose: &Pose,
    ) -> Result<SamplePair, SynthError> {
        let (rgb, pointcloud) = self.renderer.render(pose);
        let label = Pose::new(
            self.bounds.normalize_position(&pose.position)?,
            pose.orientation(),
        )?;
        Ok(SamplePair {
            rgb,
            pointcloud,
            pose: label,
            scene_id: self.spec.scene_id,
            regime,
            index,
        })
    }
}

/// Lazily renders the samples of every scene, ordered by
/// `(scene_id, index)`.
#[derive(Debug)]
pub struct DatasetGenerator {
    config: SynthConfig,
    scenes: Vec<SceneAssets>,
}

impl DatasetGenerator {
    pub fn new(config: SynthConfig) -> Result<Self, SynthError> {
        config.validate()?;
        let scenes = (0..config.num_scenes)
            .map(|id| SceneAssets::build(id, &config))
            .collect::<Result<_, _>>()?;
        Ok(Self { config, scenes })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn scenes(&self) -> &[SceneAssets] {
        &self.scenes
    }

    pub fn bounds(&self) -> Vec<SceneBounds> {
        self.scenes.iter().map(|s| s.bounds).collect()
    }

    pub fn samples(&self) -> impl Iterator<Item = Result<SamplePair, SynthError>> + '_ {
        self.scenes.iter().flat_map(move |scene| {
            let poses = scene.poses(&self.config);
            let (poses, err) = match poses {
                Ok(p) => (p, None),
                Err(e) => (Vec::new(), Some(Err(e))),
            };
            err.into_iter().chain(
                poses
                    .into_iter()
                    .enumerate()
                    .map(move |(i, (regime, pose))| scene.sample(i, regime, &pose)),
            )
        })
    }
}
