use std::path::Path;
use std::process::{Command, Output};

fn isrm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isrm"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn run_episode_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        stdout(&isrm(&["run-episode", "--seed", "5", "--steps", "200", "--noise", "on", "--out", out], dir.path()));
    }
    for f in ["map.isrm", "metrics.csv", "trajectory.csv", "config.txt"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn evaluate_reproduces_episode_metrics() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&isrm(&["gen-env", "--seed", "2", "--out", "fp.txt"], dir.path()));
    let run = stdout(&isrm(&["run-episode", "--env", "fp.txt", "--steps", "150", "--out", "ep"], dir.path()));
    let eval = stdout(&isrm(&["evaluate", "--map", "ep/map.isrm", "--env", "fp.txt"], dir.path()));
    let eval_row = eval.lines().nth(1).unwrap();
    let run_row = run.lines().nth(1).unwrap();
    assert!(run_row.starts_with(eval_row), "{run_row} vs {eval_row}");
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ep.cfg"), "# short run\nmax_steps=40\nfusion=bayes\nmode=repeated\n").unwrap();
    stdout(&isrm(&["run-episode", "--config", "ep.cfg", "--seed", "3", "--noise", "on", "--out", "ep"], dir.path()));
    let cfg = std::fs::read_to_string(dir.path().join("ep/config.txt")).unwrap();
    for line in ["max_steps=40", "fusion=bayes", "mode=repeated", "noise=on", "seed=3"] {
        assert!(cfg.lines().any(|l| l == line), "missing {line} in\n{cfg}");
    }
    let traj = std::fs::read_to_string(dir.path().join("ep/trajectory.csv")).unwrap();
    assert!(traj.lines().count() <= 41);
}

#[test]
fn render_writes_ppm() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&isrm(&["run-episode", "--steps", "20", "--out", "ep"], dir.path()));
    stdout(&isrm(&["render", "--map", "ep/map.isrm", "--out", "m.ppm"], dir.path()));
    let bytes = std::fs::read(dir.path().join("m.ppm")).unwrap();
    assert!(bytes.starts_with(b"P6\n160 160\n255\n"));
    assert_eq!(bytes.len(), 15 + 160 * 160 * 3);
}

#[test]
fn train_classifier_prints_history() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&isrm(&["train-classifier", "--loss", "infonce", "--epochs", "2", "--out", "p.bin"], dir.path()));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_acc");
    assert_eq!(lines.len(), 3);
    assert!(dir.path().join("p.bin").exists());
}

#[test]
fn dataset_feeds_training() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&isrm(
        &["extract-dataset", "--num-envs", "2", "--episodes", "1", "--steps", "40", "--out", "s.bin"],
        dir.path(),
    ));
    assert!(out.starts_with("samples,train,val\n"));
    let hist = stdout(&isrm(&["train-classifier", "--samples", "s.bin", "--epochs", "1"], dir.path()));
    assert_eq!(hist.lines().count(), 2);
}

#[test]
fn errors_use_kind_prefix() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "warp_speed=9\n").unwrap();
    let o = isrm(&["run-episode", "--config", "bad.cfg", "--out", "ep"], dir.path());
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("error,config,"), "{err}");

    let o = isrm(&["gen-env", "--width", "20", "--height", "20", "--out", "fp.txt"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error,infeasible_config,"));
}

#[test]
fn bench_prints_one_row_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&isrm(&["bench", "--num-envs", "1", "--steps", "30"], dir.path()));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "fusion,mode,noise,episodes,mask_acc,ovr_acc,mean_iou,explored_fraction,aborted");
    assert_eq!(lines.len(), 9);
}
