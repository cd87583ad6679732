//! Subcommand bodies as library calls. Each writes its artifacts under the
//! given output directory and returns a serializable summary.

use std::path::{Path, PathBuf};

use image::RgbImage;
use lidarloc_core::dataset::{
    read_sample, write_dataset, DatasetHeader, DatasetManifest, SampleRecord, Split, MANIFEST_FILE,
};
use lidarloc_core::synth::{DatasetGenerator, SamplePair};
use lidarloc_nets::checkpoint::read_meta;
use lidarloc_nets::convert::{images_to_tensor, tensor_to_images, ValueRange};
use lidarloc_nets::train::{
    confusion_matrix, error_table, train_classifier, train_regressor, train_translator,
    ConfusionMatrix, ErrorTable, ImagePairs, LabeledImages, MetricLog, PoseImages,
};
use lidarloc_nets::{Classifier, Direction, Discriminator, Generator, Regressor};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{evenly_spaced, Config};
use crate::error::{io_err, PipelineError, Result};
use crate::pipeline::{evaluate_pipeline, PipelineReport, PointSource, PoseEstimate};
use crate::plot;
use crate::registry::{self, ModelRegistry, RegistryInfo, REGISTRY_FILE};

pub fn generate(config: &Config, out: &Path) -> Result<DatasetManifest> {
    let generator = DatasetGenerator::new(config.synth.clone())?;
    let header = DatasetHeader::from_generator(&generator);
    let manifest = write_dataset(generator.samples(), out, &header, &config.dataset)?;
    let copy = out.join("config.toml");
    std::fs::write(&copy, config.to_toml()).map_err(io_err(&copy))?;
    Ok(manifest)
}

fn square_size(manifest: &DatasetManifest) -> Result<usize> {
    if manifest.image_width != manifest.image_height {
        return Err(PipelineError::Invalid(format!(
            "models need square images, dataset has {}x{}",
            manifest.image_width, manifest.image_height
        )));
    }
    Ok(manifest.image_width as usize)
}

/// Records of one split, `max_per_scene` evenly spaced ones from each scene
/// (or from the whole split when `per_scene` is false).
fn select(
    manifest: &DatasetManifest,
    split: Split,
    scene: Option<usize>,
    max: Option<usize>,
    per_scene: bool,
) -> Vec<SampleRecord> {
    let mut recs: Vec<SampleRecord> = manifest.records(split, scene).cloned().collect();
    recs.sort_by_key(|r| (r.scene_id, r.index));
    if !per_scene {
        return evenly_spaced(&recs, max);
    }
    let mut out = Vec::new();
    for s in 0..manifest.num_scenes {
        let of_scene: Vec<SampleRecord> =
            recs.iter().filter(|r| r.scene_id == s).cloned().collect();
        out.extend(evenly_spaced(&of_scene, max));
    }
    out
}

fn read_all(root: &Path, records: &[SampleRecord]) -> Result<Vec<SamplePair>> {
    Ok(records
        .iter()
        .map(|r| read_sample(root, r))
        .collect::<std::result::Result<_, _>>()?)
}

fn open_dataset(dataset: &Path, out: &Path) -> Result<DatasetManifest> {
    let manifest = DatasetManifest::load(dataset)?;
    registry::prepare(out, &RegistryInfo::from_manifest(&manifest, Some(dataset)))?;
    Ok(manifest)
}

/// Replaces the run's JSONL log and renders its curves.
fn write_log(out: &Path, run: &str, log: &MetricLog) -> Result<()> {
    let path = registry::log_path(out, run);
    if path.exists() {
        std::fs::remove_file(&path).map_err(io_err(&path))?;
    }
    log.append_jsonl(&path)?;
    save_png(&plot::training_curves(log), &registry::plot_path(out, run))
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    img.save(path).map_err(|e| PipelineError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn load_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| PipelineError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub run: String,
    pub checkpoint: PathBuf,
    pub train_samples: usize,
    pub val_samples: usize,
    pub steps: u64,
    /// Best validation accuracy (classifier), lowest validation loss
    /// (regressor) or final held-out L1 (translator).
    pub val_metric: Option<f64>,
}

pub fn train_classifier_stage(
    config: &Config,
    dataset: &Path,
    out: &Path,
    seed: Option<u64>,
) -> Result<TrainSummary> {
    let manifest = open_dataset(dataset, out)?;
    let stage = &config.classifier;
    let mut spec = stage.spec.clone();
    spec.input_size = square_size(&manifest)?;
    spec.num_classes = manifest.num_scenes;
    let mut train_cfg = stage.train.clone();
    train_cfg.seed = seed.unwrap_or(train_cfg.seed);
    let train = read_all(
        dataset,
        &select(
            &manifest,
            Split::Train,
            None,
            stage.max_train_per_scene,
            true,
        ),
    )?;
    let val = read_all(
        dataset,
        &select(&manifest, Split::Val, None, stage.max_val_per_scene, true),
    )?;
    let train_data = LabeledImages::from_samples(&train)?;
    let val_data = if val.is_empty() {
        None
    } else {
        Some(LabeledImages::from_samples(&val)?)
    };
    let model = Classifier::new(spec, train_cfg.seed)?;
    let run = train_classifier(model, &train_data, val_data.as_ref(), &train_cfg)?;
    let checkpoint = registry::classifier_path(out);
    run.model.save(&checkpoint, run.steps)?;
    write_log(out, "classifier", &run.log)?;
    Ok(TrainSummary {
        run: "classifier".into(),
        checkpoint,
        train_samples: train.len(),
        val_samples: val.len(),
        steps: run.steps,
        val_metric: run.best_val_accuracy,
    })
}

pub fn train_translator_stage(
    config: &Config,
    dataset: &Path,
    out: &Path,
    direction: Option<Direction>,
    seed: Option<u64>,
) -> Result<TrainSummary> {
    let manifest = open_dataset(dataset, out)?;
    let stage = &config.translator;
    let direction = direction.unwrap_or(stage.direction);
    let size = square_size(&manifest)?;
    let (mut g_spec, mut d_spec) = (stage.generator.clone(), stage.discriminator.clone());
    (g_spec.input_size, d_spec.input_size) = (size, size);
    let mut train_cfg = stage.train.clone();
    train_cfg.seed = seed.unwrap_or(train_cfg.seed);
    let train = read_all(
        dataset,
        &select(&manifest, Split::Train, None, stage.max_pairs, false),
    )?;
    let val = read_all(
        dataset,
        &select(&manifest, Split::Val, None, stage.max_val_pairs, false),
    )?;
    let train_pairs = ImagePairs::from_samples(&train, direction)?;
    let val_pairs = if val.is_empty() {
        None
    } else {
        Some(ImagePairs::from_samples(&val, direction)?)
    };
    let generator = Generator::new(g_spec, direction, train_cfg.seed)?;
    let discriminator = Discriminator::new(d_spec, train_cfg.seed.wrapping_add(1))?;
    let run = train_translator(
        generator,
        discriminator,
        &train_pairs,
        val_pairs.as_ref(),
        &train_cfg,
    )?;
    let checkpoint = registry::translator_path(out, direction);
    run.generator.save(&checkpoint, run.steps)?;
    run.discriminator
        .save(&registry::discriminator_path(out, direction), run.steps)?;
    let name = format!("translator_{direction}");
    write_log(out, &name, &run.log)?;
    Ok(TrainSummary {
        run: name,
        checkpoint,
        train_samples: train.len(),
        val_samples: val.len(),
        steps: run.steps,
        val_metric: run.final_val_l1,
    })
}

/// Trains the regressor of `scene`, or of every scene when `None`.
pub fn train_regressor_stage(
    config: &Config,
    dataset: &Path,
    out: &Path,
    scene: Option<usize>,
    seed: Option<u64>,
) -> Result<Vec<TrainSummary>> {
    let manifest = open_dataset(dataset, out)?;
    let stage = &config.regressor;
    let mut spec = stage.spec.clone();
    spec.input_size = square_size(&manifest)?;
    let scenes: Vec<usize> = match scene {
        Some(s) if s >= manifest.num_scenes => {
            return Err(PipelineError::Invalid(format!(
                "scene {s} not in a {}-scene dataset",
                manifest.num_scenes
            )))
        }
        Some(s) => vec![s],
        None => (0..manifest.num_scenes).collect(),
    };
    let mut summaries = Vec::new();
    for s in scenes {
        let mut train_cfg = stage.train.clone();
        train_cfg.seed = seed.unwrap_or(train_cfg.seed);
        let train = read_all(
            dataset,
            &select(&manifest, Split::Train, Some(s), stage.max_train, true),
        )?;
        let val = read_all(
            dataset,
            &select(&manifest, Split::Val, Some(s), stage.max_val, true),
        )?;
        let train_data = PoseImages::from_samples(&train)?;
        let val_data = if val.is_empty() {
            None
        } else {
            Some(PoseImages::from_samples(&val)?)
        };
        let model = Regressor::new(spec.clone(), train_cfg.seed)?;
        let run = train_regressor(model, &train_data, val_data.as_ref(), &train_cfg)?;
        let checkpoint = registry::regressor_path(out, s);
        run.model
            .save(&checkpoint, run.steps, s, &manifest.bounds(s)?)?;
        let name = format!("regressor_scene_{s}");
        write_log(out, &name, &run.log)?;
        summaries.push(TrainSummary {
            run: name,
            checkpoint,
            train_samples: train.len(),
            val_samples: val.len(),
            steps: run.steps,
            val_metric: run.best_val_loss,
        });
    }
    Ok(summaries)
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub test_samples: usize,
    pub confusion: ConfusionMatrix,
    pub scene_accuracy: f64,
    /// Each sample regressed by its true scene's model.
    pub error_table: ErrorTable,
    /// Each sample routed by the classifier.
    pub pipeline: PipelineReport,
}

/// Scores the registry on the test split and writes JSON + PNG artifacts and
/// the training curves of every logged run under `out`.
pub fn evaluate(
    config: &Config,
    dataset: &Path,
    registry_root: &Path,
    out: &Path,
) -> Result<Evaluation> {
    let manifest = DatasetManifest::load(dataset)?;
    let registry = ModelRegistry::load(registry_root)?;
    if registry.info().scene_bounds != manifest.scene_bounds {
        return Err(PipelineError::Registry {
            root: registry_root.to_path_buf(),
            message: format!("was not trained on the scenes of {}", dataset.display()),
        });
    }
    let (classifier, translator) = registry.front_end()?;
    let test = read_all(
        dataset,
        &select(
            &manifest,
            Split::Test,
            None,
            config.evaluate.max_test_per_scene,
            true,
        ),
    )?;
    if test.is_empty() {
        return Err(PipelineError::Invalid(
            "the dataset has no test samples".into(),
        ));
    }
    let confusion = confusion_matrix(classifier, &LabeledImages::from_samples(&test)?)?;
    let table = error_table(registry.regressors(), translator, &test)?;
    let pipeline = evaluate_pipeline(&registry, &test)?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    write_json(&out.join("confusion_matrix.json"), &confusion)?;
    save_png(
        &plot::confusion_heatmap(&confusion),
        &out.join("confusion_matrix.png"),
    )?;
    write_json(&out.join("error_table.json"), &table)?;
    let mut rows: Vec<(String, _, _)> = table
        .per_scene
        .iter()
        .map(|(s, e)| (format!("S{s}"), e.end_to_end, e.oracle))
        .collect();
    rows.push(("ALL".into(), table.end_to_end, table.oracle));
    save_png(&plot::error_bars(&rows), &out.join("error_table.png"))?;
    write_json(&out.join("pipeline.json"), &pipeline)?;
    let logs = registry_root.join("logs");
    if logs.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&logs)
            .map_err(io_err(&logs))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        entries.sort();
        for path in entries {
            let log = MetricLog::read_jsonl(&path)?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
            save_png(
                &plot::training_curves(&log),
                &out.join(format!("curves_{stem}.png")),
            )?;
        }
    }
    let evaluation = Evaluation {
        test_samples: test.len(),
        scene_accuracy: confusion.accuracy(),
        confusion,
        error_table: table,
        pipeline,
    };
    write_json(&out.join("evaluation.json"), &evaluation)?;
    Ok(evaluation)
}

/// Localizes one RGB image; with `pointcloud`, the translator is bypassed.
pub fn localize(
    registry_root: &Path,
    image: &Path,
    pointcloud: Option<&Path>,
    out: Option<&Path>,
) -> Result<PoseEstimate> {
    let registry = ModelRegistry::load(registry_root)?;
    let rgb = load_png(image)?;
    let estimate = match pointcloud {
        None => registry.localize(&rgb)?,
        Some(p) => {
            let pc = load_png(p)?;
            registry
                .localize_batch(&[&rgb], PointSource::GroundTruth(&[&pc]))?
                .remove(0)
        }
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_json(&dir.join("estimate.json"), &estimate)?;
    }
    Ok(estimate)
}

/// Runs a trained translator over one image and saves the result as
/// `<out>/<stem>_<direction>.png`.
pub fn convert(
    registry_root: &Path,
    image: &Path,
    direction: Direction,
    out: &Path,
) -> Result<PathBuf> {
    let registry = ModelRegistry::load(registry_root)?;
    let generator = registry
        .translator(direction)
        .ok_or_else(|| PipelineError::Registry {
            root: registry_root.to_path_buf(),
            message: format!("missing {direction} translator"),
        })?;
    let src = load_png(image)?;
    if src.dimensions() != registry.image_size() {
        return Err(PipelineError::ImageSize {
            expected: registry.image_size(),
            got: src.dimensions(),
        });
    }
    let y = generator.forward(&images_to_tensor(&[&src], ValueRange::Signed)?)?;
    let result = tensor_to_images(&y, ValueRange::Signed)?.remove(0);
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let stem = image
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    let path = out.join(format!("{stem}_{direction}.png"));
    save_png(&result, &path)?;
    Ok(path)
}

/// Describes a dataset directory, a registry directory or a checkpoint file.
pub fn inspect(path: &Path) -> Result<Value> {
    if path.join(MANIFEST_FILE).is_file() {
        let manifest = DatasetManifest::load(path)?;
        let files_ok = manifest.validate(path).is_ok();
        let scenes: Vec<Value> = manifest
            .split_counts()
            .iter()
            .map(|(scene, counts)| {
                let get = |s: Split| counts.get(&s).copied().unwrap_or(0);
                json!({
                    "scene_id": scene,
                    "samples": counts.values().sum::<usize>(),
                    "train": get(Split::Train),
                    "val": get(Split::Val),
                    "test": get(Split::Test),
                    "diagonal_m": manifest.bounds(*scene).map(|b| b.diagonal()).ok(),
                })
            })
            .collect();
        return Ok(json!({
            "kind": "dataset",
            "format_version": manifest.format_version,
            "num_scenes": manifest.num_scenes,
            "num_samples": manifest.samples.len(),
            "image_size": [manifest.image_width, manifest.image_height],
            "generation_seed": manifest.generation_seed,
            "files_ok": files_ok,
            "scenes": scenes,
        }));
    }
    if path.join(REGISTRY_FILE).is_file() {
        let registry = ModelRegistry::load(path)?;
        let mut models = Vec::new();
        if registry.classifier().is_some() {
            models.push("classifier".to_string());
        }
        for d in [Direction::RgbToPointcloud, Direction::PointcloudToRgb] {
            if registry.translator(d).is_some() {
                models.push(format!("translator_{d}"));
            }
        }
        models.extend(
            registry
                .regressors()
                .keys()
                .map(|s| format!("regressor_scene_{s}")),
        );
        return Ok(json!({
            "kind": "registry",
            "info": registry.info(),
            "models": models,
            "gaps": registry.gaps().iter().map(ToString::to_string).collect::<Vec<_>>(),
            "complete": registry.gaps().is_empty(),
        }));
    }
    if path.is_file() {
        let meta = read_meta(path)?;
        return Ok(json!({ "kind": "checkpoint", "meta": meta }));
    }
    Err(PipelineError::Invalid(format!(
        "{} is not a dataset, registry or checkpoint",
        path.display()
    )))
}
