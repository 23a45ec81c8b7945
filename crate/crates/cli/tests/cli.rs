use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sdelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdelab")).args(args).output().unwrap()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(text.trim_end().lines().count(), 1, "stderr: {text}");
    serde_json::from_str(text.trim()).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn help_lists_every_task_with_blocks() {
    let out = sdelab(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for task in [
        "sample",
        "train",
        "likelihood",
        "encode",
        "decode",
        "impute",
        "condition",
        "kernel-check",
        "variance-check",
        "sampler-bench",
        "identifiability",
    ] {
        assert!(text.contains(&format!("  {task} ")), "{task} missing");
    }
    assert!(text.contains("[sde, check]"));
    assert!(text.contains("SDELAB_THREADS"));
}

#[test]
fn print_config_round_trips() {
    let first = sdelab(&[
        "sample",
        "--seed",
        "4",
        "--set",
        "sampler.steps=50",
        "--set",
        "sde.kind=ve",
        "--print-config",
    ]);
    assert!(first.status.success());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.txt");
    fs::write(&path, &first.stdout).unwrap();
    let second = sdelab(&["--config", path.to_str().unwrap(), "--print-config"]);
    assert!(second.status.success(), "{}", String::from_utf8_lossy(&second.stderr));
    assert_eq!(first.stdout, second.stdout);
    let text = String::from_utf8(first.stdout).unwrap();
    assert!(text.contains("seed=4\n"));
    assert!(text.contains("sampler.steps=50\n"));
    assert!(text.contains("sampler.snr=0.16\n"));
}

#[test]
fn precedence_file_then_set_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.txt");
    fs::write(&path, "# comment\ntask=sample\nseed=1\nsampler.steps=10 # trailing\n").unwrap();
    let out = sdelab(&[
        "--config",
        path.to_str().unwrap(),
        "--set",
        "seed=2",
        "--set",
        "sampler.steps=20",
        "--seed",
        "3",
        "--print-config",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("seed=3\n"));
    assert!(text.contains("sampler.steps=20\n"));
}

#[test]
fn unknown_key_is_a_single_json_line() {
    let out = sdelab(&["sample", "--set", "sampler.stepz=5"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "unknown_key");
    assert_eq!(err["field"], "sampler.stepz");
}

#[test]
fn invalid_values_name_the_field() {
    for (set, field) in [
        ("sde.sigma_max=0.001", "sde.sigma_max"),
        ("sampler.steps=0", "sampler.steps"),
        ("data.weights=0.5,0.6", "data.weights"),
        ("sampler.predictor=leapfrog", "sampler.predictor"),
    ] {
        let out = sdelab(&["sample", "--set", "sde.kind=ve", "--set", set]);
        assert_eq!(out.status.code(), Some(2), "{set}");
        assert_eq!(stderr_json(&out)["field"], field, "{set}");
    }
}

#[test]
fn task_is_required() {
    let out = sdelab(&["--print-config"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["field"], "task");
}

#[test]
fn bad_thread_count_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_sdelab"))
        .args(["kernel-check", "--print-config"])
        .env("SDELAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["field"], "SDELAB_THREADS");
}

#[test]
fn kernel_check_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = sdelab(&[
        "kernel-check",
        "--set",
        "sde.kind=ve",
        "--set",
        "check.steps=100",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let csv = read(dir.path(), "kernel.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# seed=0 config_hash="));
    assert_eq!(
        lines[1],
        "t,discrete_std,continuous_std,discrete_mean_coeff,continuous_mean_coeff"
    );
    assert_eq!(lines.len(), 2 + 100);
    let metrics: Value = serde_json::from_str(&read(dir.path(), "metrics.json")).unwrap();
    assert!(metrics["max_rel_std"].as_f64().unwrap() < 0.1);
    assert_eq!(metrics["seed"], 0);
}

#[test]
fn variance_check_rows_are_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let out = sdelab(&["variance-check", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let csv = read(dir.path(), "variance.csv");
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 101);
    for r in &rows {
        assert!((r[1] - 1.0).abs() <= 1e-12);
        assert!(r[2] <= r[1]);
    }
}

#[test]
fn sample_artifacts_carry_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let out = sdelab(&[
        "sample",
        "--seed",
        "9",
        "--set",
        "sampler.batch_size=50",
        "--set",
        "sampler.steps=20",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: Value = serde_json::from_str(&read(dir.path(), "metrics.json")).unwrap();
    let hash = metrics["config_hash"].as_str().unwrap().to_string();
    assert_eq!(metrics["seed"], 9);
    assert_eq!(metrics["counts"]["samples"], 50);
    let csv = read(dir.path(), "samples.csv");
    assert_eq!(csv.lines().next().unwrap(), format!("# seed=9 config_hash={hash}"));
    assert_eq!(csv.lines().count(), 2 + 50);
    let svg = read(dir.path(), "report.svg");
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let desc = doc.descendants().find(|n| n.has_tag_name("desc")).unwrap();
    assert!(desc.text().unwrap().contains(&hash));
}

#[test]
fn output_directory_does_not_change_the_hash() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert!(sdelab(&["variance-check", "--out", d.path().to_str().unwrap()])
            .status
            .success());
    }
    assert_eq!(read(a.path(), "variance.csv"), read(b.path(), "variance.csv"));
    assert_eq!(read(a.path(), "report.svg"), read(b.path(), "report.svg"));
}

#[test]
fn impute_csv_has_mask_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = sdelab(&[
        "impute",
        "--set",
        "data.weights=1",
        "--set",
        "data.means=0,0",
        "--set",
        "data.variances=1,1",
        "--set",
        "impute.indices=1",
        "--set",
        "impute.values=0.5",
        "--set",
        "sampler.batch_size=20",
        "--set",
        "sampler.steps=20",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "samples.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[1], "# mask=0,1 basis=standard");
    assert_eq!(lines[2], "x_0,x_1");
    for l in &lines[3..] {
        let v: f64 = l.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(v, 0.5);
    }
}

#[test]
fn decoupled_imputation_needs_three_dimensions() {
    let out = sdelab(&[
        "impute",
        "--set",
        "impute.indices=0",
        "--set",
        "impute.values=1",
        "--set",
        "impute.decouple=true",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["field"], "impute.decouple");
}

#[test]
fn checkpoint_for_another_sde_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = sdelab(&[
        "train",
        "--set",
        "train.iterations=5",
        "--set",
        "net.hidden=4",
        "--out",
        d,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = dir.path().join("checkpoint.json");
    let set = format!("score.checkpoint={}", ckpt.display());
    let ok = sdelab(&[
        "sample",
        "--set",
        "score.source=checkpoint",
        "--set",
        &set,
        "--set",
        "sampler.batch_size=5",
        "--set",
        "sampler.steps=5",
        "--out",
        d,
    ]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let bad = sdelab(&[
        "sample",
        "--set",
        "score.source=checkpoint",
        "--set",
        &set,
        "--set",
        "sde.kind=ve",
        "--out",
        d,
    ]);
    assert_eq!(bad.status.code(), Some(1));
    let err = stderr_json(&bad);
    assert_eq!(err["error"], "invalid_checkpoint");
    assert_eq!(err["field"], "score.checkpoint");
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = sdelab(&[
            "sample",
            "--set",
            "sampler.batch_size=30",
            "--set",
            "sampler.steps=30",
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    for name in ["samples.csv", "metrics.json", "report.svg", "config.txt"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
}

#[test]
fn thread_count_does_not_change_artifacts() {
    let dirs: Vec<_> = ["1", "3"]
        .iter()
        .map(|threads| {
            let d = tempfile::tempdir().unwrap();
            let out = Command::new(env!("CARGO_BIN_EXE_sdelab"))
                .args([
                    "sample",
                    "--set",
                    "sampler.batch_size=40",
                    "--set",
                    "sampler.steps=25",
                    "--out",
                ])
                .arg(d.path())
                .env("SDELAB_THREADS", threads)
                .output()
                .unwrap();
            assert!(out.status.success());
            d
        })
        .collect();
    for name in ["samples.csv", "metrics.json", "report.svg"] {
        assert_eq!(read(dirs[0].path(), name), read(dirs[1].path(), name), "{name}");
    }
}
