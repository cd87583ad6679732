use std::path::Path;

use lidarloc::cli::{run, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
use lidarloc::commands::inspect;

fn lidarloc(args: &[&str]) -> i32 {
    run(std::iter::once("lidarloc").chain(args.iter().copied()))
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("c.toml");
    std::fs::write(&path, "[synth]\nnum_scenes = 3\nsamples_per_scene = 7\n[dataset.split]\ntrain = 0.6\nval = 0.2\ntest = 0.2\n")
        .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn generate_then_inspect_reports_the_configured_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("d");
    let out_s = out.to_str().unwrap();
    assert_eq!(
        lidarloc(&["generate", "--config", &config, "--out", out_s]),
        EXIT_OK
    );
    assert_eq!(lidarloc(&["inspect", out_s]), EXIT_OK);
    let report = inspect(&out).unwrap();
    assert_eq!(report["kind"], "dataset");
    assert_eq!(report["num_scenes"], 3);
    assert_eq!(report["num_samples"], 21);
    assert_eq!(report["files_ok"], true);
    for scene in report["scenes"].as_array().unwrap() {
        assert_eq!(scene["samples"], 7);
        let parts: u64 = ["train", "val", "test"]
            .iter()
            .map(|k| scene[k].as_u64().unwrap())
            .sum();
        assert_eq!(parts, 7);
    }
    // the dataset is never overwritten
    assert_eq!(
        lidarloc(&["generate", "--config", &config, "--out", out_s]),
        EXIT_FAILURE
    );
}

#[test]
fn seed_flag_changes_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let [a, b, c] = ["a", "b", "c"].map(|n| dir.path().join(n));
    for (out, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        assert_eq!(
            lidarloc(&[
                "generate",
                "--config",
                &config,
                "--seed",
                seed,
                "--out",
                out.to_str().unwrap()
            ]),
            EXIT_OK
        );
    }
    let manifest = |p: &Path| std::fs::read(p.join("manifest.json")).unwrap();
    assert_eq!(manifest(&a), manifest(&b));
    assert_ne!(manifest(&a), manifest(&c));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(lidarloc(&["localize", "--image", "x.png"]), EXIT_USAGE);
    assert_eq!(lidarloc(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(lidarloc(&["inspect", "x", "--bogus"]), EXIT_USAGE);
    assert_eq!(
        lidarloc(&[
            "train-translator",
            "--dataset",
            "d",
            "--out",
            "o",
            "--direction",
            "sideways"
        ]),
        EXIT_USAGE
    );
    assert_eq!(lidarloc(&[]), EXIT_USAGE);
    assert_eq!(lidarloc(&["--help"]), EXIT_OK);
    assert_eq!(lidarloc(&["evaluate", "--help"]), EXIT_OK);
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let missing = missing.to_str().unwrap();
    assert_eq!(lidarloc(&["inspect", missing]), EXIT_FAILURE);
    assert_eq!(
        lidarloc(&["localize", "--registry", missing, "--image", missing]),
        EXIT_FAILURE
    );
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[synth]\nnum_scenes = \"four\"\n").unwrap();
    assert_eq!(
        lidarloc(&[
            "generate",
            "--config",
            bad.to_str().unwrap(),
            "--out",
            missing
        ]),
        EXIT_FAILURE
    );
    let config = write_config(dir.path());
    let data = dir.path().join("d");
    let data = data.to_str().unwrap();
    assert_eq!(
        lidarloc(&["generate", "--config", &config, "--out", data]),
        EXIT_OK
    );
    let reg = dir.path().join("r");
    let reg = reg.to_str().unwrap();
    assert_eq!(
        lidarloc(&[
            "train-regressor",
            "--dataset",
            data,
            "--out",
            reg,
            "--scene",
            "9"
        ]),
        EXIT_FAILURE
    );
}
