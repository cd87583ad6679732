//! On-disk dataset layout:
//!
//! ```text
//! root/manifest.json
//! root/scene_<id>/rgb/<index>.png
//! root/scene_<id>/pc/<index>.png
//! ```
//!
//! The manifest is a single JSON document holding generation metadata,
//! per-scene bounds and one record per sample with its normalized pose label
//! and split.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Pose, Quaternion, SceneBounds};
use crate::synth::{mix_seed, DatasetGenerator, RegimeKind, SamplePair, SynthConfig};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("refusing to write an empty dataset")]
    Empty,
    #[error("{0} already contains a dataset")]
    AlreadyExists(PathBuf),
    #[error("invalid manifest: {0}")]
    Invalid(String),
    #[error("sample source failed: {0}")]
    Source(Box<dyn std::error::Error + Send + Sync>),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 1,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(*f >= 0.0)) || !(parts.iter().sum::<f64>() > 0.0) {
            return Err(DatasetError::Invalid(
                "split fractions must be non-negative with a positive sum".into(),
            ));
        }
        Ok(())
    }

    /// Per-split sample counts for a scene with `n` samples (largest
    /// remainder; each count within one sample of its exact share).
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let total = self.train + self.val + self.test;
        let quotas = [self.train, self.val, self.test].map(|f| f / total * n as f64);
        let mut counts = quotas.map(|q| q.floor() as usize);
        let mut left = n - counts.iter().sum::<usize>();
        let mut order = [0usize, 1, 2];
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

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub split: SplitConfig,
    pub allow_empty: bool,
}

/// Generation metadata recorded alongside the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub generation_seed: u64,
    pub num_scenes: usize,
    pub scene_bounds: Vec<SceneBounds>,
    pub image_width: u32,
    pub image_height: u32,
    pub synth: Option<SynthConfig>,
}

impl DatasetHeader {
    pub fn from_generator(generator: &DatasetGenerator) -> Self {
        let config = generator.config();
        Self {
            generation_seed: config.seed,
            num_scenes: config.num_scenes,
            scene_bounds: generator.bounds(),
            image_width: config.intrinsics.width,
            image_height: config.intrinsics.height,
            synth: Some(config.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub scene_id: usize,
    pub index: usize,
    pub regime: RegimeKind,
    pub rgb: String,
    pub pointcloud: String,
    /// Normalized to `[-1, 1]` by the scene bounds.
    pub position: [f64; 3],
    /// `(w, x, y, z)`, unit norm.
    pub quaternion: [f64; 4],
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub generation_seed: u64,
    pub num_scenes: usize,
    pub image_width: u32,
    pub image_height: u32,
    pub scene_bounds: Vec<SceneBounds>,
    pub split: SplitConfig,
    pub synth: Option<SynthConfig>,
    pub samples: Vec<SampleRecord>,
}

/// Rank key deciding a sample's split: a pure function of the index and
/// split seed.
pub fn split_key(index: usize, split_seed: u64) -> u64 {
    mix_seed(split_seed, index as u64)
}

/// Assigns splits per scene: samples sorted by [`split_key`] fill train,
/// then val, then test, in the configured proportions.
fn assign_splits(records: &mut [SampleRecord], split: &SplitConfig) {
    let mut by_scene: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_scene.entry(r.scene_id).or_default().push(i);
    }
    for idx in by_scene.values_mut() {
        idx.sort_by_key(|&i| (split_key(records[i].index, split.seed), records[i].index));
        let [n_train, n_val, _] = split.counts(idx.len());
        for (rank, &i) in idx.iter().enumerate() {
            records[i].split = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
}

/// Files and directories created during a write, removed again on failure.
struct Rollback {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    armed: bool,
}

impl Rollback {
    fn create_dir(&mut self, dir: &Path) -> Result<(), DatasetError> {
        let mut missing = Vec::new();
        let mut cur = Some(dir);
        while let Some(d) = cur {
            if d.as_os_str().is_empty() || d.exists() {
                break;
            }
            missing.push(d.to_path_buf());
            cur = d.parent();
        }
        fs::create_dir_all(dir).map_err(|source| DatasetError::Write {
            path: dir.to_path_buf(),
            source,
        })?;
        self.dirs.extend(missing.into_iter().rev());
        Ok(())
    }
}

impl Drop for Rollback {
    fn drop(&mut self) {
        if !self.armed {
            return;
        }
        for f in self.files.iter().rev() {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

fn save_png(img: &image::RgbImage, path: &Path) -> Result<(), DatasetError> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| DatasetError::Write {
            path: path.to_path_buf(),
            source: match e {
                image::ImageError::IoError(io) => io,
                other => std::io::Error::other(other.to_string()),
            },
        })
}

/// Writes every sample as a pair of PNGs plus the manifest. On failure the
/// files and directories created so far are removed.
pub fn write_dataset<I, E>(
    samples: I,
    root: &Path,
    header: &DatasetHeader,
    config: &DatasetConfig,
) -> Result<DatasetManifest, DatasetError>
where
    I: IntoIterator<Item = Result<SamplePair, E>>,
    E: std::error::Error + Send + Sync + 'static,
{
    config.split.validate()?;
    if header.scene_bounds.len() != header.num_scenes {
        return Err(DatasetError::Invalid(
            "scene bounds do not match the scene count".into(),
        ));
    }
    if root.join(MANIFEST_FILE).exists() {
        return Err(DatasetError::AlreadyExists(root.to_path_buf()));
    }
    let mut rollback = Rollback {
        files: Vec::new(),
        dirs: Vec::new(),
        armed: true,
    };
    rollback.create_dir(root)?;
    let mut records = Vec::new();
    let mut made_dirs = std::collections::BTreeSet::new();
    for sample in samples {
        let s = sample.map_err(|e| DatasetError::Source(Box::new(e)))?;
        if s.scene_id >= header.num_scenes {
            return Err(DatasetError::Invalid(format!(
                "sample scene id {} out of range",
                s.scene_id
            )));
        }
        if s.rgb.dimensions() != (header.image_width, header.image_height)
            || s.pointcloud.dimensions() != s.rgb.dimensions()
        {
            return Err(DatasetError::Invalid(format!(
                "sample {}/{} has the wrong image size",
                s.scene_id, s.index
            )));
        }
        let scene_dir = format!("scene_{}", s.scene_id);
        if made_dirs.insert(s.scene_id) {
            rollback.create_dir(&root.join(&scene_dir).join("rgb"))?;
            rollback.create_dir(&root.join(&scene_dir).join("pc"))?;
        }
        let rgb_rel = format!("{scene_dir}/rgb/{:06}.png", s.index);
        let pc_rel = format!("{scene_dir}/pc/{:06}.png", s.index);
        for (img, rel) in [(&s.rgb, &rgb_rel), (&s.pointcloud, &pc_rel)] {
            let path = root.join(rel);
            rollback.files.push(path.clone());
            save_png(img, &path)?;
        }
        let q = s.pose.orientation();
        records.push(SampleRecord {
            scene_id: s.scene_id,
            index: s.index,
            regime: s.regime,
            rgb: rgb_rel,
            pointcloud: pc_rel,
            position: [s.pose.position.x, s.pose.position.y, s.pose.position.z],
            quaternion: q.to_array(),
            split: Split::Train,
        });
    }
    if records.is_empty() && !config.allow_empty {
        return Err(DatasetError::Empty);
    }
    records.sort_by_key(|r| (r.scene_id, r.index));
    assign_splits(&mut records, &config.split);
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        generation_seed: header.generation_seed,
        num_scenes: header.num_scenes,
        image_width: header.image_width,
        image_height: header.image_height,
        scene_bounds: header.scene_bounds.clone(),
        split: config.split,
        synth: header.synth.clone(),
        samples: records,
    };
    let path = root.join(MANIFEST_FILE);
    let tmp = root.join(".manifest.json.tmp");
    rollback.files.push(tmp.clone());
    fs::write(&tmp, manifest.to_json()).map_err(|source| DatasetError::Write {
        path: tmp.clone(),
        source,
    })?;
    fs::rename(&tmp, &path).map_err(|source| DatasetError::Write {
        path: path.clone(),
        source,
    })?;
    rollback.armed = false;
    Ok(manifest)
}

/// Per-scene, per-split sample counts.
pub type SplitCounts = BTreeMap<usize, BTreeMap<Split, usize>>;

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn load(root: &Path) -> Result<Self, DatasetError> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| DatasetError::Read {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let m: Self = serde_json::from_str(&text).map_err(|e| DatasetError::Read {
            path,
            message: e.to_string(),
        })?;
        if m.format_version != FORMAT_VERSION {
            return Err(DatasetError::Invalid(format!(
                "unsupported format version {}",
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn bounds(&self, scene_id: usize) -> Result<SceneBounds, DatasetError> {
        self.scene_bounds
            .get(scene_id)
            .copied()
            .ok_or_else(|| DatasetError::Invalid(format!("no bounds for scene {scene_id}")))
    }

    pub fn split_counts(&self) -> SplitCounts {
        let mut out = SplitCounts::new();
        for r in &self.samples {
            *out.entry(r.scene_id)
                .or_default()
                .entry(r.split)
                .or_default() += 1;
        }
        out
    }

    pub fn records<'a>(
        &'a self,
        split: Split,
        scene: Option<usize>,
    ) -> impl Iterator<Item = &'a SampleRecord> + 'a {
        self.samples
            .iter()
            .filter(move |r| r.split == split && scene.is_none_or(|s| r.scene_id == s))
    }

    /// Full integrity check: referenced files exist, labels are in range,
    /// keys are unique and split sizes match the configured fractions.
    pub fn validate(&self, root: &Path) -> Result<(), DatasetError> {
        if self.scene_bounds.len() != self.num_scenes {
            return Err(DatasetError::Invalid(
                "scene bounds do not match the scene count".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.samples {
            if r.scene_id >= self.num_scenes {
                return Err(DatasetError::Invalid(format!(
                    "scene id {} out of range",
                    r.scene_id
                )));
            }
            if !seen.insert((r.scene_id, r.index)) {
                return Err(DatasetError::Invalid(format!(
                    "duplicate sample {}/{}",
                    r.scene_id, r.index
                )));
            }
            if r.position.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(DatasetError::Invalid(format!(
                    "sample {}/{} position out of range",
                    r.scene_id, r.index
                )));
            }
            if !Quaternion::from_array(r.quaternion).is_unit(1e-6) {
                return Err(DatasetError::Invalid(format!(
                    "sample {}/{} quaternion not unit",
                    r.scene_id, r.index
                )));
            }
            for rel in [&r.rgb, &r.pointcloud] {
                if !root.join(rel).is_file() {
                    return Err(DatasetError::Read {
                        path: root.join(rel),
                        message: "missing file".into(),
                    });
                }
            }
        }
        for (scene, counts) in self.split_counts() {
            let n: usize = counts.values().sum();
            let total = self.split.train + self.split.val + self.split.test;
            for (split, frac) in
                Split::ALL
                    .iter()
                    .zip([self.split.train, self.split.val, self.split.test])
            {
                let got = counts.get(split).copied().unwrap_or(0) as f64;
                if (got - frac / total * n as f64).abs() > 1.0 {
                    return Err(DatasetError::Invalid(format!(
                        "scene {scene} {} split has {got} samples",
                        split.as_str()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn load_png(path: &Path) -> Result<image::RgbImage, DatasetError> {
    let img = image::open(path).map_err(|e| DatasetError::Read {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

/// Decodes one record.
pub fn read_sample(root: &Path, record: &SampleRecord) -> Result<SamplePair, DatasetError> {
    let rgb = load_png(&root.join(&record.rgb))?;
    let pointcloud = load_png(&root.join(&record.pointcloud))?;
    if rgb.dimensions() != pointcloud.dimensions() {
        return Err(DatasetError::Read {
            path: root.join(&record.pointcloud),
            message: "image size differs from its RGB pair".into(),
        });
    }
    let pose = Pose::new(
        Vector3::from(record.position),
        Quaternion::from_array(record.quaternion),
    )?;
    Ok(SamplePair {
        rgb,
        pointcloud,
        pose,
        scene_id: record.scene_id,
        index: record.index,
        regime: record.regime,
    })
}

/// Streams the samples of one split in `(scene_id, index)` order, optionally
/// restricted to one scene.
pub fn read_split<'a>(
    manifest: &'a DatasetManifest,
    root: &'a Path,
    split: Split,
    scene: Option<usize>,
) -> impl Iterator<Item = Result<SamplePair, DatasetError>> + 'a {
    let mut recs: Vec<&SampleRecord> = manifest.records(split, scene).collect();
    recs.sort_by_key(|r| (r.scene_id, r.index));
    recs.into_iter().map(move |r| read_sample(root, r))
}
