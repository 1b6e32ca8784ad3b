use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
[system]
grid = 16
frames = 30
burn_in = 20
amplitudes = 3.0,3.5,4.0,4.5

[model]
dim = 16
layers = 2
mlp_ratio = 2
history = 3
forecast = 1

[training]
steps = 3
batch = 2
warmup = 1
probes_min = 4
probes_max = 8
checkpoint_every = 2

[twin]
seeds = 2
steps = 2
history = 3
grid_rows = 3
grid_cols = 3
vertical_count = 5

[eval]
t0 = 3
horizon = 10
jacobian_steps = 4
jacobian_iters = 3
logistic_starts = 20
";

fn paint(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paint"))
        .current_dir(dir)
        .env("PAINT_THREADS", "1")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = paint(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.ini"), TINY).unwrap();
    dir
}

#[test]
fn printed_config_reloads_unchanged() {
    let dir = tiny_dir();
    let first = ok(dir.path(), &["--config", "tiny.ini", "--print-config"]);
    std::fs::write(dir.path().join("full.ini"), &first).unwrap();
    assert_eq!(ok(dir.path(), &["--config", "full.ini", "--print-config"]), first);
}

#[test]
fn flags_override_the_file_which_overrides_defaults() {
    let dir = tiny_dir();
    let out = ok(dir.path(), &["--config", "tiny.ini", "--set", "training.batch=5", "--print-config", "train", "--model", "paint", "--steps", "9"]);
    assert!(out.contains("steps = 9\n"));
    assert!(out.contains("batch = 5\n"));
    // untouched by the file
    assert!(out.contains("lr_peak = 1e-4\n"));
}

#[test]
fn config_problems_exit_with_code_2() {
    let dir = tiny_dir();
    for args in [
        &["--set", "model.width=3", "simulate"][..],
        &["--config", "missing.ini", "simulate"],
        &["--set", "twin.mode=both", "--print-config"],
        &["--config", "tiny.ini", "train", "--model", "paint"],
        &["train", "--model", "transformer"],
    ] {
        assert_eq!(paint(dir.path(), args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn diverging_training_exits_with_code_3() {
    let dir = tiny_dir();
    ok(dir.path(), &["--config", "tiny.ini", "simulate"]);
    let out = paint(
        dir.path(),
        &["--config", "tiny.ini", "--set", "training.lr_peak=1e30", "--set", "training.steps=20", "train", "--model", "ar"],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn full_pipeline_writes_every_report() {
    let dir = tiny_dir();
    let d = dir.path();
    ok(d, &["--config", "tiny.ini", "simulate"]);
    let manifest = std::fs::read_to_string(d.join("data/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 4);

    let out = ok(d, &["--config", "tiny.ini", "train", "--model", "paint"]);
    assert!(out.contains("paint parameters: "));
    ok(d, &["--config", "tiny.ini", "train", "--model", "ar"]);

    ok(d, &["--config", "tiny.ini", "reconstruct", "--mode", "sliding", "--seeds", "2"]);
    assert!(d.join("runs/reconstruct/traj_002_paint_grid.ptrj").exists());
    assert!(d.join("runs/reconstruct/traj_002_paint_grid.std.ptrj").exists());

    ok(d, &["--config", "tiny.ini", "evaluate"]);
    let metrics = std::fs::read_to_string(d.join("runs/eval/metrics.csv")).unwrap();
    // two models on two constellations for the one test trajectory
    assert_eq!(metrics.lines().count(), 1 + 4);
    assert!(metrics.starts_with("model,param,constellation,"));
    for f in ["mse_over_time.svg", "spectrum.svg"] {
        assert!(d.join("runs/eval").join(f).exists(), "{f}");
    }

    ok(d, &["--config", "tiny.ini", "diagnose", "--logistic", "--jacobian", "--eps", "1e-4,1e-6"]);
    let summary = std::fs::read_to_string(d.join("runs/eval/divergence_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    let jac = std::fs::read_to_string(d.join("runs/eval/jacobian_series.csv")).unwrap();
    assert!(jac.lines().any(|l| l.starts_with("logistic/")));
    assert!(jac.lines().any(|l| l.starts_with("ar/")));

    let plotted = ok(d, &["--config", "tiny.ini", "plot"]);
    assert_eq!(plotted.lines().count(), 3);
}

#[test]
fn killed_training_resumes_to_the_same_log() {
    let dir = tiny_dir();
    let d = dir.path();
    ok(d, &["--config", "tiny.ini", "simulate"]);
    let train = ["--config", "tiny.ini", "train", "--model", "ar", "--steps", "4"];
    ok(d, &train);
    let full = std::fs::read_to_string(d.join("runs/ar_loss.csv")).unwrap();

    std::fs::remove_dir_all(d.join("runs")).unwrap();
    // checkpoints land every 2 steps, so the killed run leaves step 2 behind
    ok(d, &[&train[..], &["--stop-after", "3"]].concat());
    let out = ok(d, &[&train[..], &["--resume"]].concat());
    assert!(out.contains("finished at step 4"));
    assert_eq!(std::fs::read_to_string(d.join("runs/ar_loss.csv")).unwrap(), full);
    assert!(ok(d, &[&train[..], &["--resume"]].concat()).contains("nothing to do"));
}
