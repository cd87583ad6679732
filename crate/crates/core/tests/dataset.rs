use std::path::Path;

use lidarloc_core::dataset::{
    read_split, write_dataset, DatasetConfig, DatasetError, DatasetHeader, DatasetManifest, Split,
    MANIFEST_FILE,
};
use lidarloc_core::synth::{DatasetGenerator, SamplePair, SynthConfig, SynthError};

fn generator() -> DatasetGenerator {
    DatasetGenerator::new(SynthConfig {
        num_scenes: 2,
        samples_per_scene: 20,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn write(g: &DatasetGenerator, root: &Path) -> DatasetManifest {
    write_dataset(
        g.samples(),
        root,
        &DatasetHeader::from_generator(g),
        &DatasetConfig::default(),
    )
    .unwrap()
}

#[test]
fn round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let g = generator();
    let written = write(&g, dir.path());
    let loaded = DatasetManifest::load(dir.path()).unwrap();
    assert_eq!(written, loaded);
    loaded.validate(dir.path()).unwrap();

    let originals: Vec<SamplePair> = g.samples().map(Result::unwrap).collect();
    let mut seen = 0;
    for split in Split::ALL {
        for s in read_split(&loaded, dir.path(), split, None) {
            let s = s.unwrap();
            let o = &originals[s.scene_id * 20 + s.index];
            assert_eq!(s.rgb, o.rgb);
            assert_eq!(s.pointcloud, o.pointcloud);
            assert_eq!(s.pose.position, o.pose.position);
            assert_eq!(s.pose.orientation(), o.pose.orientation());
            assert_eq!(s.regime, o.regime);
            seen += 1;
        }
    }
    assert_eq!(seen, 40);
}

#[test]
fn regeneration_gives_identical_manifest_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write(&generator(), a.path());
    write(&generator(), b.path());
    let ma = std::fs::read(a.path().join(MANIFEST_FILE)).unwrap();
    let mb = std::fs::read(b.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(ma, mb);
    let img = "scene_1/pc/000007.png";
    assert_eq!(
        std::fs::read(a.path().join(img)).unwrap(),
        std::fs::read(b.path().join(img)).unwrap()
    );
}

#[test]
fn splits_follow_fractions_per_scene() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(&generator(), dir.path());
    for counts in m.split_counts().values() {
        assert_eq!(counts[&Split::Train], 16);
        assert_eq!(counts[&Split::Val], 2);
        assert_eq!(counts[&Split::Test], 2);
    }
    let scene1: Vec<_> = read_split(&m, dir.path(), Split::Test, Some(1))
        .map(Result::unwrap)
        .collect();
    assert!(scene1.iter().all(|s| s.scene_id == 1));
    assert!(scene1.windows(2).all(|w| w[0].index < w[1].index));
}

#[test]
fn failed_write_leaves_nothing_behind() {
    let parent = tempfile::tempdir().unwrap();
    let root = parent.path().join("out");
    let g = generator();
    let failing = g
        .samples()
        .take(5)
        .chain(std::iter::once(Err(SynthError::Config("boom".into()))));
    let err = write_dataset(
        failing,
        &root,
        &DatasetHeader::from_generator(&g),
        &DatasetConfig::default(),
    )
    .unwrap_err();
    assert!(matches!(err, DatasetError::Source(_)));
    assert!(!root.exists());
}

#[test]
fn empty_dataset_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let g = generator();
    let none = std::iter::empty::<Result<SamplePair, SynthError>>();
    let err = write_dataset(
        none,
        dir.path(),
        &DatasetHeader::from_generator(&g),
        &DatasetConfig::default(),
    );
    assert!(matches!(err, Err(DatasetError::Empty)));
    assert!(!dir.path().join(MANIFEST_FILE).exists());
}

#[test]
fn existing_dataset_is_not_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let g = generator();
    write(&g, dir.path());
    let err = write_dataset(
        g.samples(),
        dir.path(),
        &DatasetHeader::from_generator(&g),
        &DatasetConfig::default(),
    );
    assert!(matches!(err, Err(DatasetError::AlreadyExists(_))));
}

#[test]
fn corrupt_image_names_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(&generator(), dir.path());
    let victim = m.samples.iter().find(|r| r.split == Split::Val).unwrap();
    std::fs::write(dir.path().join(&victim.rgb), b"not a png").unwrap();
    let err = read_split(&m, dir.path(), Split::Val, None)
        .find_map(Result::err)
        .unwrap();
    assert!(err.to_string().contains(&victim.rgb), "{err}");
}

#[test]
fn validate_catches_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(&generator(), dir.path());
    std::fs::remove_file(dir.path().join(&m.samples[3].pointcloud)).unwrap();
    assert!(m.validate(dir.path()).is_err());
}
