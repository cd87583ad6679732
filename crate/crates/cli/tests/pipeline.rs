use std::path::{Path, PathBuf};

use image::RgbImage;
use lidarloc::commands;
use lidarloc::pipeline::BOUNDS_MARGIN;
use lidarloc::registry::{self, classifier_path, regressor_path, translator_path};
use lidarloc::{Config, Gap, ModelRegistry, PipelineError, PointSource, RegistryInfo};
use lidarloc_core::dataset::{read_split, DatasetManifest, Split};
use lidarloc_core::synth::SamplePair;
use lidarloc_nets::convert::{images_to_tensor, ValueRange};
use lidarloc_nets::{
    Classifier, ClassifierSpec, Direction, Generator, GeneratorSpec, Mode, Regressor, RegressorSpec,
};
use nalgebra::Vector3;

fn small_config() -> Config {
    let mut c = Config::default();
    c.synth.num_scenes = 2;
    c.synth.samples_per_scene = 12;
    c
}

fn dataset(dir: &Path) -> (PathBuf, DatasetManifest, Vec<SamplePair>) {
    let root = dir.join("data");
    let manifest = commands::generate(&small_config(), &root).unwrap();
    let samples: Vec<SamplePair> = read_split(&manifest, &root, Split::Train, None)
        .collect::<Result<_, _>>()
        .unwrap();
    (root, manifest, samples)
}

struct Parts {
    classifier: bool,
    translator: bool,
    regressors: Vec<usize>,
}

fn registry(dir: &Path, manifest: &DatasetManifest, parts: Parts) -> PathBuf {
    let root = dir.join("registry");
    registry::prepare(&root, &RegistryInfo::from_manifest(manifest, None)).unwrap();
    if parts.classifier {
        let spec = ClassifierSpec {
            num_classes: manifest.num_scenes,
            ..ClassifierSpec::default()
        };
        Classifier::new(spec, 1)
            .unwrap()
            .save(&classifier_path(&root), 0)
            .unwrap();
    }
    if parts.translator {
        let g = Generator::new(GeneratorSpec::default(), Direction::RgbToPointcloud, 2).unwrap();
        g.save(&translator_path(&root, Direction::RgbToPointcloud), 0)
            .unwrap();
    }
    for s in parts.regressors {
        let r = Regressor::new(RegressorSpec::default(), 3 + s as u64).unwrap();
        r.save(
            &regressor_path(&root, s),
            0,
            s,
            &manifest.bounds(s).unwrap(),
        )
        .unwrap();
    }
    root
}

fn complete(dir: &Path, manifest: &DatasetManifest) -> ModelRegistry {
    let root = registry(
        dir,
        manifest,
        Parts {
            classifier: true,
            translator: true,
            regressors: vec![0, 1],
        },
    );
    ModelRegistry::load(&root).unwrap()
}

#[test]
fn estimates_satisfy_the_output_contract() {
    let dir = tempfile::tempdir().unwrap();
    let (_, manifest, samples) = dataset(dir.path());
    let reg = complete(dir.path(), &manifest);
    assert!(reg.gaps().is_empty());
    let rgbs: Vec<&RgbImage> = samples.iter().map(|s| &s.rgb).collect();
    let batch = reg.localize_batch(&rgbs, PointSource::Translated).unwrap();
    let probs = reg.classifier().unwrap().forward(
        &images_to_tensor(&rgbs, ValueRange::Unit).unwrap(),
        &mut Mode::Eval,
    );
    let probs: Vec<Vec<f32>> = probs.unwrap().to_vec2().unwrap();
    for (k, est) in batch.iter().enumerate() {
        assert!(est.orientation.is_unit(1e-6));
        assert!(est.position.iter().all(|v| v.is_finite()));
        // the reported confidence is the probability the argmax picked
        let max = probs[k].iter().cloned().fold(f32::MIN, f32::max);
        assert_eq!(est.confidence, max as f64);
        assert_eq!(
            probs[k].iter().position(|p| *p == max).unwrap(),
            est.scene_id
        );
        let inside = manifest
            .bounds(est.scene_id)
            .unwrap()
            .expanded(BOUNDS_MARGIN)
            .contains(&Vector3::from(est.position), 0.0);
        assert_eq!(est.out_of_bounds, !inside);
        // one-at-a-time and batched paths agree, and repeated calls are identical
        let single = reg.localize(rgbs[k]).unwrap();
        assert_eq!(single.scene_id, est.scene_id);
        assert!((0..3).all(|i| (single.position[i] - est.position[i]).abs() < 1e-4));
        assert_eq!(single, reg.localize(rgbs[k]).unwrap());
    }
}

#[test]
fn concurrent_calls_share_one_registry() {
    let dir = tempfile::tempdir().unwrap();
    let (_, manifest, samples) = dataset(dir.path());
    let reg = complete(dir.path(), &manifest);
    let expected = reg.localize(&samples[0].rgb).unwrap();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..3)
            .map(|_| scope.spawn(|| reg.localize(&samples[0].rgb).unwrap()))
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), expected);
        }
    });
}

#[test]
fn wrong_image_size_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (_, manifest, _) = dataset(dir.path());
    let reg = complete(dir.path(), &manifest);
    let small = RgbImage::new(32, 32);
    match reg.localize(&small) {
        Err(PipelineError::ImageSize { expected, got }) => {
            assert_eq!((expected, got), ((64, 64), (32, 32)))
        }
        other => panic!("expected a size error, got {other:?}"),
    }
}

#[test]
fn missing_regressor_is_never_substituted() {
    let dir = tempfile::tempdir().unwrap();
    let (_, manifest, samples) = dataset(dir.path());
    let full = complete(dir.path(), &manifest);
    let predicted = full.localize(&samples[0].rgb).unwrap().scene_id;
    let other = 1 - predicted;
    std::fs::remove_file(regressor_path(full.root(), predicted)).unwrap();
    let reg = ModelRegistry::load(full.root()).unwrap();
    assert_eq!(reg.gaps(), vec![Gap::Regressor(predicted)]);
    assert!(reg.regressor(other).is_some());
    let err = reg.localize(&samples[0].rgb).unwrap_err();
    assert!(matches!(err, PipelineError::MissingRegressor(s) if s == predicted));
    assert!(err.to_string().contains(&format!("scene {predicted}")));
}

#[test]
fn gaps_are_reported_before_inference() {
    let dir = tempfile::tempdir().unwrap();
    let (_, manifest, samples) = dataset(dir.path());
    let root = registry(
        dir.path(),
        &manifest,
        Parts {
            classifier: true,
            translator: false,
            regressors: vec![],
        },
    );
    let reg = ModelRegistry::load(&root).unwrap();
    assert_eq!(
        reg.gaps(),
        vec![
            Gap::Translator(Direction::RgbToPointcloud),
            Gap::Regressor(0),
            Gap::Regressor(1)
        ]
    );
    let err = reg.localize(&samples[0].rgb).unwrap_err();
    assert!(err.to_string().contains("rgb2pc translator"), "{err}");
}

#[test]
fn bypass_mode_feeds_the_ground_truth_render() {
    let dir = tempfile::tempdir().unwrap();
    let (_, manifest, samples) = dataset(dir.path());
    let reg = complete(dir.path(), &manifest);
    let rgbs: Vec<&RgbImage> = samples.iter().take(4).map(|s| &s.rgb).collect();
    let pcs: Vec<&RgbImage> = samples.iter().take(4).map(|s| &s.pointcloud).collect();
    let est = reg
        .localize_batch(&rgbs, PointSource::GroundTruth(&pcs))
        .unwrap();
    for (k, e) in est.iter().enumerate() {
        let (model, bounds) = reg.regressor(e.scene_id).unwrap();
        let raw = model
            .predict(&images_to_tensor(&[pcs[k]], ValueRange::Unit).unwrap())
            .unwrap();
        let (p, q) = lidarloc_nets::decode_pose(&raw[0], bounds).unwrap();
        assert!((Vector3::from(e.position) - p).norm() < 1e-4);
        assert!((e.orientation.dot(&q) - 1.0).abs() < 1e-6);
    }
    assert!(reg
        .localize_batch(&rgbs, PointSource::GroundTruth(&pcs[..2]))
        .is_err());
}

#[test]
fn registry_rejects_mislabeled_or_foreign_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (_, manifest, _) = dataset(dir.path());
    let root = registry(
        dir.path(),
        &manifest,
        Parts {
            classifier: false,
            translator: false,
            regressors: vec![],
        },
    );
    let r = Regressor::new(RegressorSpec::default(), 0).unwrap();
    r.save(
        &regressor_path(&root, 0),
        0,
        1,
        &manifest.bounds(1).unwrap(),
    )
    .unwrap();
    assert!(matches!(
        ModelRegistry::load(&root),
        Err(PipelineError::Registry { .. })
    ));
    std::fs::remove_file(regressor_path(&root, 0)).unwrap();

    let wrong = Generator::new(GeneratorSpec::default(), Direction::PointcloudToRgb, 0).unwrap();
    wrong
        .save(&translator_path(&root, Direction::RgbToPointcloud), 0)
        .unwrap();
    assert!(matches!(
        ModelRegistry::load(&root),
        Err(PipelineError::Registry { .. })
    ));

    // a registry built from other scenes refuses new models
    let mut other = RegistryInfo::from_manifest(&manifest, None);
    other.scene_bounds.swap(0, 1);
    assert!(registry::prepare(&root, &other).is_err());
}
