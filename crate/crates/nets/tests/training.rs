use std::sync::OnceLock;

use lidarloc_core::geometry::PoseLossSpec;
use lidarloc_core::synth::{DatasetGenerator, SamplePair, SynthConfig};
use lidarloc_nets::train::{
    confusion_matrix, patch_accuracy, train_classifier, train_discriminator, train_regressor,
    train_translator, ClassifierTrainConfig, ImagePairs, LabeledImages, Phase, PoseImages,
    RegressorTrainConfig, TranslatorTrainConfig,
};
use lidarloc_nets::{
    Classifier, ClassifierSpec, Direction, Discriminator, DiscriminatorSpec, Generator,
    GeneratorSpec, NetError, Regressor, RegressorSpec,
};

fn samples() -> &'static [SamplePair] {
    static SAMPLES: OnceLock<Vec<SamplePair>> = OnceLock::new();
    SAMPLES.get_or_init(|| {
        let g = DatasetGenerator::new(SynthConfig {
            num_scenes: 4,
            samples_per_scene: 40,
            ..SynthConfig::default()
        })
        .unwrap();
        g.samples().collect::<Result<_, _>>().unwrap()
    })
}

/// First `n` samples of every scene.
fn per_scene(n: usize, skip: usize) -> Vec<SamplePair> {
    samples()
        .iter()
        .filter(|s| s.index >= skip && s.index < skip + n)
        .cloned()
        .collect()
}

#[test]
fn classifier_overfits_a_small_subset() {
    let train = LabeledImages::from_samples(&per_scene(8, 0)).unwrap();
    let model = Classifier::new(ClassifierSpec::default(), 1).unwrap();
    let config = ClassifierTrainConfig {
        epochs: 40,
        ..ClassifierTrainConfig::default()
    };
    let run = train_classifier(model, &train, None, &config).unwrap();
    let cm = confusion_matrix(&run.model, &train).unwrap();
    assert_eq!(cm.total(), 32);
    assert_eq!(cm.accuracy(), 1.0, "{:?}", cm.counts);
    assert!(run
        .log
        .phase(Phase::Train)
        .all(|r| r.values["loss"].is_finite()));
}

#[test]
fn untrained_classifier_is_near_chance() {
    let val = LabeledImages::from_samples(&per_scene(40, 0)).unwrap();
    let mut accs = Vec::new();
    for seed in 0..3 {
        let model = Classifier::new(ClassifierSpec::default(), seed).unwrap();
        let config = ClassifierTrainConfig {
            epochs: 0,
            ..ClassifierTrainConfig::default()
        };
        let run = train_classifier(model, &val, Some(&val), &config).unwrap();
        accs.push(run.log.series(Phase::Val, "accuracy")[0].1);
    }
    // an untrained network tends to predict one class: mean over seeds near 1/4
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((0.0..=0.6).contains(&mean), "{accs:?}");
}

#[test]
fn classifier_training_is_deterministic() {
    let train = LabeledImages::from_samples(&per_scene(4, 0)).unwrap();
    let config = ClassifierTrainConfig {
        epochs: 2,
        batch_size: 8,
        ..ClassifierTrainConfig::default()
    };
    let run = |_: ()| {
        let model = Classifier::new(ClassifierSpec::default(), 5).unwrap();
        train_classifier(model, &train, None, &config).unwrap().log
    };
    assert_eq!(run(()), run(()));
}

#[test]
fn single_class_data_is_rejected() {
    let one: Vec<SamplePair> = samples()
        .iter()
        .filter(|s| s.scene_id == 0)
        .take(8)
        .cloned()
        .collect();
    let data = LabeledImages::from_samples(&one).unwrap();
    let model = Classifier::new(ClassifierSpec::default(), 0).unwrap();
    let err = train_classifier(model, &data, None, &ClassifierTrainConfig::default()).unwrap_err();
    assert!(matches!(err, NetError::Data(_)));
}

fn scene_pose_data(scene: usize, n: usize, skip: usize) -> PoseImages {
    let s: Vec<SamplePair> = samples()
        .iter()
        .filter(|s| s.scene_id == scene && s.index >= skip)
        .take(n)
        .cloned()
        .collect();
    PoseImages::from_samples(&s).unwrap()
}

#[test]
fn regressor_overfits_a_small_subset() {
    let train = scene_pose_data(1, 16, 0);
    let model = Regressor::new(RegressorSpec::default(), 2).unwrap();
    let config = RegressorTrainConfig {
        epochs: 500,
        batch_size: 16,
        ..RegressorTrainConfig::default()
    };
    let run = train_regressor(model, &train, None, &config).unwrap();
    let pred = run.model.predict(&train.images).unwrap();
    let err: f64 = pred
        .iter()
        .zip(&train.targets)
        .map(|(p, t)| {
            ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2) + (p[2] - t[2]).powi(2)).sqrt()
        })
        .sum::<f64>()
        / 16.0;
    assert!(err < 0.02, "mean normalized position error {err}");
}

#[test]
fn regressor_log_terms_recombine() {
    let train = scene_pose_data(2, 24, 0);
    let val = scene_pose_data(2, 8, 24);
    let config = RegressorTrainConfig {
        epochs: 8,
        batch_size: 8,
        ..RegressorTrainConfig::default()
    };
    let model = Regressor::new(RegressorSpec::default(), 3).unwrap();
    let run = train_regressor(model, &train, Some(&val), &config).unwrap();
    let beta = config.loss.beta;
    for r in run.log.records() {
        let v = &r.values;
        assert!((v["loss"] - (v["position"] + v["orientation"] / beta)).abs() < 1e-6);
    }
    let val_loss = run.log.series(Phase::Val, "loss");
    assert!(val_loss.iter().all(|(_, l)| l.is_finite()));
    assert!(run.best_val_loss.unwrap() <= val_loss[0].1);
    let train_loss = run.log.series(Phase::Train, "loss");
    let (first, last) = (&train_loss[..3], &train_loss[train_loss.len() - 3..]);
    let mean = |xs: &[(u64, f64)]| xs.iter().map(|x| x.1).sum::<f64>() / xs.len() as f64;
    assert!(mean(last) < mean(first), "{train_loss:?}");
}

#[test]
fn doubling_beta_keeps_the_initial_position_term() {
    let train = scene_pose_data(0, 8, 0);
    let log_for = |beta: f64| {
        let model = Regressor::new(RegressorSpec::default(), 4).unwrap();
        let config = RegressorTrainConfig {
            epochs: 1,
            batch_size: 8,
            loss: PoseLossSpec::new(beta).unwrap(),
            ..RegressorTrainConfig::default()
        };
        train_regressor(model, &train, None, &config).unwrap().log
    };
    let (a, b) = (log_for(100.0), log_for(200.0));
    let first = |log: &lidarloc_nets::train::MetricLog| {
        log.phase(Phase::Train).next().unwrap().values.clone()
    };
    let (ra, rb) = (first(&a), first(&b));
    assert_eq!(ra["position"], rb["position"]);
    assert_eq!(ra["orientation"], rb["orientation"]);
    let qa = ra["loss"] - ra["position"];
    let qb = rb["loss"] - rb["position"];
    assert!((qb - 0.5 * qa).abs() < 1e-9, "{qa} {qb}");
}

#[test]
fn empty_scene_subset_is_rejected() {
    let empty = PoseImages {
        images: scene_pose_data(0, 1, 0).images,
        targets: vec![],
    };
    let model = Regressor::new(RegressorSpec::default(), 0).unwrap();
    assert!(train_regressor(model, &empty, None, &RegressorTrainConfig::default()).is_err());
}

fn pairs(n: usize, skip: usize) -> ImagePairs {
    ImagePairs::from_samples(&per_scene(n, skip), Direction::RgbToPointcloud).unwrap()
}

#[test]
fn zero_lambda_leaves_pure_adversarial_loss() {
    let train = pairs(2, 0);
    let g = Generator::new(GeneratorSpec::default(), Direction::RgbToPointcloud, 6).unwrap();
    let d = Discriminator::new(DiscriminatorSpec::default(), 7).unwrap();
    let config = TranslatorTrainConfig {
        steps: 4,
        lambda_l1: 0.0,
        log_every: 1,
        ..TranslatorTrainConfig::default()
    };
    let run = train_translator(g, d, &train, None, &config).unwrap();
    assert_eq!(run.log.phase(Phase::Train).count(), 4);
    for r in run.log.phase(Phase::Train) {
        assert_eq!(r.values["g_l1"], 0.0);
        assert_eq!(r.values["g_loss"], r.values["g_adv"]);
        assert!(r.values["mae"] > 0.0);
        assert!(r.values["output_min"] >= -1.0 && r.values["output_max"] <= 1.0);
    }
}

#[test]
fn translator_reduces_held_out_l1() {
    let train = pairs(16, 0);
    let val = pairs(4, 30);
    let g = Generator::new(GeneratorSpec::default(), Direction::RgbToPointcloud, 8).unwrap();
    let d = Discriminator::new(DiscriminatorSpec::default(), 9).unwrap();
    let config = TranslatorTrainConfig {
        steps: 150,
        eval_every: 50,
        ..TranslatorTrainConfig::default()
    };
    let run = train_translator(g, d, &train, Some(&val), &config).unwrap();
    let (init, fin) = (run.initial_val_l1.unwrap(), run.final_val_l1.unwrap());
    assert!(fin < 0.6 * init, "held-out L1 {init} -> {fin}");
}

#[test]
fn discriminator_separates_real_from_frozen_random_generator() {
    let train = pairs(8, 0);
    let g = Generator::new(GeneratorSpec::default(), Direction::RgbToPointcloud, 10).unwrap();
    let d = Discriminator::new(DiscriminatorSpec::default(), 11).unwrap();
    let config = TranslatorTrainConfig {
        steps: 60,
        ..TranslatorTrainConfig::default()
    };
    let (d, log) = train_discriminator(&g, d, &train, &config).unwrap();
    let acc = patch_accuracy(&g, &d, &train).unwrap();
    assert!(acc > 0.9, "patch accuracy {acc}");
    assert!(log.last(Phase::Train, "d_loss").unwrap().is_finite());
}

#[test]
fn unpaired_data_is_rejected() {
    let a = pairs(2, 0);
    let b = pairs(1, 0);
    assert!(matches!(
        ImagePairs::new(a.source, b.target),
        Err(NetError::Data(_))
    ));
}
