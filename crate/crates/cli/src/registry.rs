//! On-disk collection of trained models plus the scene bounds that map
//! regressor outputs to meters.
//!
//! ```text
//! <root>/registry.json
//! <root>/classifier.safetensors
//! <root>/translator_rgb2pc.safetensors   (and _pc2rgb, discriminator_*)
//! <root>/regressor_scene_<id>.safetensors
//! <root>/logs/<run>.jsonl
//! <root>/plots/<run>.png
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use lidarloc_core::dataset::DatasetManifest;
use lidarloc_core::geometry::SceneBounds;
use lidarloc_nets::{Classifier, Direction, Generator, Regressor};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, PipelineError, Result};

pub const REGISTRY_FILE: &str = "registry.json";
pub const REGISTRY_VERSION: u32 = 1;

/// Dataset geometry every model in a registry must agree on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryInfo {
    pub format_version: u32,
    pub num_scenes: usize,
    pub image_width: u32,
    pub image_height: u32,
    pub scene_bounds: Vec<SceneBounds>,
    /// Dataset the first model was trained on, as given on the command line.
    pub dataset: Option<PathBuf>,
}

impl RegistryInfo {
    pub fn from_manifest(manifest: &DatasetManifest, dataset: Option<&Path>) -> Self {
        Self {
            format_version: REGISTRY_VERSION,
            num_scenes: manifest.num_scenes,
            image_width: manifest.image_width,
            image_height: manifest.image_height,
            scene_bounds: manifest.scene_bounds.clone(),
            dataset: dataset.map(Path::to_path_buf),
        }
    }

    fn compatible(&self, other: &Self) -> bool {
        self.num_scenes == other.num_scenes
            && (self.image_width, self.image_height) == (other.image_width, other.image_height)
            && self.scene_bounds == other.scene_bounds
    }

    pub fn bounds(&self, scene_id: usize) -> Option<SceneBounds> {
        self.scene_bounds.get(scene_id).copied()
    }
}

pub fn classifier_path(root: &Path) -> PathBuf {
    root.join("classifier.safetensors")
}

pub fn translator_path(root: &Path, direction: Direction) -> PathBuf {
    root.join(format!("translator_{direction}.safetensors"))
}

pub fn discriminator_path(root: &Path, direction: Direction) -> PathBuf {
    root.join(format!("discriminator_{direction}.safetensors"))
}

pub fn regressor_path(root: &Path, scene_id: usize) -> PathBuf {
    root.join(format!("regressor_scene_{scene_id}.safetensors"))
}

pub fn log_path(root: &Path, run: &str) -> PathBuf {
    root.join("logs").join(format!("{run}.jsonl"))
}

pub fn plot_path(root: &Path, run: &str) -> PathBuf {
    root.join("plots").join(format!("{run}.png"))
}

fn registry_err(root: &Path, message: impl Into<String>) -> PipelineError {
    PipelineError::Registry {
        root: root.to_path_buf(),
        message: message.into(),
    }
}

/// Creates `root` and its `registry.json` for this dataset, or checks that
/// an existing registry was built from a compatible one.
pub fn prepare(root: &Path, info: &RegistryInfo) -> Result<()> {
    std::fs::create_dir_all(root.join("logs")).map_err(io_err(root))?;
    std::fs::create_dir_all(root.join("plots")).map_err(io_err(root))?;
    let file = root.join(REGISTRY_FILE);
    if file.exists() {
        let existing = read_info(root)?;
        if !existing.compatible(info) {
            return Err(registry_err(
                root,
                "was built from a dataset with different scenes or image size",
            ));
        }
        return Ok(());
    }
    let json = serde_json::to_string_pretty(info).expect("registry info serializes") + "\n";
    std::fs::write(&file, json).map_err(io_err(&file))
}

pub fn read_info(root: &Path) -> Result<RegistryInfo> {
    let file = root.join(REGISTRY_FILE);
    let text = std::fs::read_to_string(&file).map_err(io_err(&file))?;
    let info: RegistryInfo =
        serde_json::from_str(&text).map_err(|e| registry_err(root, e.to_string()))?;
    if info.format_version != REGISTRY_VERSION {
        return Err(registry_err(
            root,
            format!("unsupported format_version {}", info.format_version),
        ));
    }
    if info.scene_bounds.len() != info.num_scenes {
        return Err(registry_err(
            root,
            "scene bounds do not match the scene count",
        ));
    }
    Ok(info)
}

/// A model the pipeline needs but the registry lacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Gap {
    Classifier,
    Translator(Direction),
    Regressor(usize),
}

impl fmt::Display for Gap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gap::Classifier => f.write_str("classifier"),
            Gap::Translator(d) => write!(f, "{d} translator"),
            Gap::Regressor(s) => write!(f, "regressor for scene {s}"),
        }
    }
}

/// Loaded once, then read-only; `&ModelRegistry` may be shared across
/// threads.
#[derive(Debug)]
pub struct ModelRegistry {
    root: PathBuf,
    info: RegistryInfo,
    classifier: Option<Classifier>,
    rgb2pc: Option<Generator>,
    pc2rgb: Option<Generator>,
    regressors: BTreeMap<usize, (Regressor, SceneBounds)>,
}

impl ModelRegistry {
    /// Loads every checkpoint present. Absent models are gaps, not errors;
    /// unreadable or inconsistent ones are errors.
    pub fn load(root: &Path) -> Result<Self> {
        let info = read_info(root)?;
        let classifier = match classifier_path(root) {
            p if p.exists() => {
                let (model, _) = Classifier::load(&p)?;
                if model.spec().num_classes != info.num_scenes {
                    return Err(registry_err(
                        root,
                        "classifier class count differs from the scene count",
                    ));
                }
                Some(model)
            }
            _ => None,
        };
        let translator = |direction| -> Result<Option<Generator>> {
            let p = translator_path(root, direction);
            if !p.exists() {
                return Ok(None);
            }
            let (g, _) = Generator::load(&p)?;
            if g.direction() != direction {
                return Err(registry_err(
                    root,
                    format!("{} holds a {} generator", p.display(), g.direction()),
                ));
            }
            Ok(Some(g))
        };
        let (rgb2pc, pc2rgb) = (
            translator(Direction::RgbToPointcloud)?,
            translator(Direction::PointcloudToRgb)?,
        );
        let mut regressors = BTreeMap::new();
        for scene in 0..info.num_scenes {
            let p = regressor_path(root, scene);
            if !p.exists() {
                continue;
            }
            let (model, stored_scene, bounds, _) = Regressor::load(&p)?;
            if stored_scene != scene || info.bounds(scene) != Some(bounds) {
                return Err(registry_err(
                    root,
                    format!("{} was trained for a different scene", p.display()),
                ));
            }
            regressors.insert(scene, (model, bounds));
        }
        let sizes = classifier
            .iter()
            .map(|c| c.spec().input_size)
            .chain(rgb2pc.iter().chain(&pc2rgb).map(|g| g.spec().input_size))
            .chain(regressors.values().map(|(r, _)| r.spec().input_size));
        for size in sizes {
            if (size as u32, size as u32) != (info.image_width, info.image_height) {
                return Err(registry_err(
                    root,
                    format!("a model expects {size}px images"),
                ));
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            info,
            classifier,
            rgb2pc,
            pc2rgb,
            regressors,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn info(&self) -> &RegistryInfo {
        &self.info
    }

    pub fn image_size(&self) -> (u32, u32) {
        (self.info.image_width, self.info.image_height)
    }

    pub fn classifier(&self) -> Option<&Classifier> {
        self.classifier.as_ref()
    }

    pub fn translator(&self, direction: Direction) -> Option<&Generator> {
        match direction {
            Direction::RgbToPointcloud => self.rgb2pc.as_ref(),
            Direction::PointcloudToRgb => self.pc2rgb.as_ref(),
        }
    }

    pub fn regressor(&self, scene_id: usize) -> Option<&(Regressor, SceneBounds)> {
        self.regressors.get(&scene_id)
    }

    pub fn regressors(&self) -> &BTreeMap<usize, (Regressor, SceneBounds)> {
        &self.regressors
    }

    /// Everything missing for localization in any scene. The pc2rgb
    /// translator is optional and never reported.
    pub fn gaps(&self) -> Vec<Gap> {
        let mut gaps = Vec::new();
        if self.classifier.is_none() {
            gaps.push(Gap::Classifier);
        }
        if self.rgb2pc.is_none() {
            gaps.push(Gap::Translator(Direction::RgbToPointcloud));
        }
        gaps.extend(
            (0..self.info.num_scenes)
                .filter(|s| !self.regressors.contains_key(s))
                .map(Gap::Regressor),
        );
        gaps
    }

    /// Classifier and rgb2pc translator, which every localization needs.
    pub(crate) fn front_end(&self) -> Result<(&Classifier, &Generator)> {
        match (&self.classifier, &self.rgb2pc) {
            (Some(c), Some(g)) => Ok((c, g)),
            _ => {
                let missing: Vec<String> = self
                    .gaps()
                    .iter()
                    .filter(|g| !matches!(g, Gap::Regressor(_)))
                    .map(Gap::to_string)
                    .collect();
                Err(registry_err(
                    &self.root,
                    format!("missing {}", missing.join(", ")),
                ))
            }
        }
    }
}
