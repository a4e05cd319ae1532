//! End-to-end checks of the `gads` binary: exit codes, file outputs, and
//! determinism of the scripted pipeline.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gads(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gads"))
        .args(args)
        .arg("--out")
        .arg(out_dir)
        .output()
        .expect("binary runs")
}

#[test]
fn synth_writes_requested_count_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = gads(
        &["synth", "--n", "25", "--max-angle", "40", "--seed", "7"],
        dir.path(),
    );
    assert!(a.status.success());
    let first = fs::read(dir.path().join("synth.jsonl")).unwrap();
    assert_eq!(first.iter().filter(|&&b| b == b'\n').count(), 25);

    let b = gads(
        &["synth", "--n", "25", "--max-angle", "40", "--seed", "7"],
        dir.path(),
    );
    assert!(b.status.success());
    let second = fs::read(dir.path().join("synth.jsonl")).unwrap();
    assert_eq!(first, second, "same argv and seed must give identical bytes");
}

#[test]
fn unknown_flag_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = gads(&["synth", "--n", "1", "--definitely-not-a-flag"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_is_a_runtime_error_with_one_line_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = gads(
        &["train", "--data", "/nonexistent/nope.jsonl", "--model", "gads"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error:"), "{stderr}");
}

#[test]
fn pipeline_train_eval_infer_bench() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let run_dir = dir.path().join("run");
    fs::create_dir_all(&data_dir).unwrap();

    let out = gads(
        &["synth", "--n", "40", "--max-angle", "45", "--seed", "3"],
        &data_dir,
    );
    assert!(out.status.success());
    let data = data_dir.join("synth.jsonl");
    let input_before = fs::read(&data).unwrap();

    let out = gads(
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--model",
            "gads",
            "--epochs",
            "2",
            "--seed",
            "1",
        ],
        &run_dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("best.ckpt").exists());
    let metrics = fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,lr,train_loss,val_mae\n"));
    assert_eq!(metrics.lines().count(), 3);

    let ckpt = run_dir.join("best.ckpt");
    let out = gads(
        &[
            "eval",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--plot",
        ],
        &run_dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(run_dir.join("report.csv")).unwrap();
    assert!(report.starts_with("dataset,model,param_count,yaw_mae,pitch_mae,roll_mae,mean_mae,n\n"));
    let svg = fs::read_to_string(run_dir.join("mae_plot.svg")).unwrap();
    assert!(svg.starts_with("<svg"));

    // infer on the first record prints three comma-separated degrees
    let one = dir.path().join("one.json");
    let first_line = fs::read_to_string(&data)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    fs::write(&one, first_line).unwrap();
    let out = gads(
        &[
            "infer",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--landmarks",
            one.to_str().unwrap(),
        ],
        &run_dir,
    );
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let fields: Vec<f64> = stdout
        .trim()
        .split(',')
        .map(|f| f.parse().unwrap())
        .collect();
    assert_eq!(fields.len(), 3);

    let out = gads(
        &[
            "bench",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--runs",
            "100",
            "--warmup",
            "10",
        ],
        &run_dir,
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("median"));
    let latency = fs::read_to_string(run_dir.join("latency.csv")).unwrap();
    assert_eq!(latency.lines().count(), 101);

    // no command mutated its input
    assert_eq!(fs::read(&data).unwrap(), input_before);
}

#[test]
fn train_is_deterministic_across_processes() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    fs::create_dir_all(&data_dir).unwrap();
    gads(
        &["synth", "--n", "30", "--max-angle", "30", "--seed", "11"],
        &data_dir,
    );
    let data = data_dir.join("synth.jsonl");

    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let run_dir = dir.path().join(run);
        let out = gads(
            &[
                "train",
                "--data",
                data.to_str().unwrap(),
                "--epochs",
                "2",
                "--seed",
                "9",
            ],
            &run_dir,
        );
        assert!(out.status.success());
        outputs.push((
            fs::read(run_dir.join("best.ckpt")).unwrap(),
            fs::read(run_dir.join("metrics.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn config_file_overrides_model_settings() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("gads.toml");
    fs::write(&config, "[model]\nheads = 8\n\n[train]\nepochs = 1\nbatch_size = 8\n").unwrap();
    let data_dir = dir.path().join("data");
    fs::create_dir_all(&data_dir).unwrap();
    gads(
        &["synth", "--n", "24", "--max-angle", "30", "--seed", "2"],
        &data_dir,
    );
    let run_dir = dir.path().join("run");
    let out = gads(
        &[
            "train",
            "--data",
            data_dir.join("synth.jsonl").to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "2",
        ],
        &run_dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // one epoch from the config file, not the default 150
    let metrics = fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
}
