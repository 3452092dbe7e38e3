use std::path::Path;
use std::process::{Command, Output};

const FAST: [&str; 6] = [
    "--set",
    "train.epochs=6",
    "--set",
    "train.grid_resolution=11",
    "--set",
    "train.boundary_every=3",
];

fn avglab(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_avglab"));
    cmd.args(args).env_remove("AVGLAB_OUT_DIR");
    if let Some(d) = env_out {
        cmd.env("AVGLAB_OUT_DIR", d);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn with_fast<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(FAST).collect()
}

#[test]
fn small_train_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = avglab(&with_fast(&["train", "--seed", "1", "--workers", "1", "--out", out.to_str().unwrap()]), None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.json", "metrics.csv", "summary.json", "timing.log"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("accuracy"));
}

#[test]
fn env_var_sets_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let o = avglab(&with_fast(&["train", "--seed", "0", "--workers", "1"]), Some(tmp.path()));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let dirs: Vec<String> = std::fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(dirs.len(), 1);
    assert!(dirs[0].starts_with("toy-"), "{dirs:?}");
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"averager": {"decay": "high"}}"#).unwrap();
    let unknown = tmp.path().join("unknown.json");
    std::fs::write(&unknown, r#"{"train": {"epoch": 3}}"#).unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["train", "--set", "averager.decay"],
        vec!["train", "--set", "averager.decay=1.5"],
        vec!["train", "--config", "/nonexistent/avglab.json"],
        vec!["train", "--config", bad.to_str().unwrap()],
        vec!["train", "--config", unknown.to_str().unwrap()],
        vec!["train", "--workers", "0"],
        vec!["sweep", "--set", "sweep.cap=3"],
        vec!["nqm", "--set", "nqm.lrs=[3.0]"],
        vec!["landscape", "--seed", "0", "--seed", "1"],
        vec!["bogus"],
    ];
    for args in cases {
        let o = avglab(&args, Some(tmp.path()));
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn error_names_the_field() {
    let o = avglab(&["train", "--set", "averager.decay=\"x\""], None);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("averager.decay"));
}

#[test]
fn divergence_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("d");
    let mut args = with_fast(&["train", "--seed", "0", "--out", out.to_str().unwrap()]);
    args.extend(["--set", "optimizer.lr=1e300", "--set", "model.activation=\"relu\""]);
    let o = avglab(&args, None);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn foreign_checkpoint_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("t");
    let mut args = with_fast(&["train", "--seed", "0", "--workers", "1", "--out", run.to_str().unwrap()]);
    args.extend(["--set", "model.layer_sizes=[2,8,2]"]);
    assert_eq!(code(&avglab(&args, None)), 0);
    let ckpt = std::fs::read_dir(run.join("checkpoints/seed0"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let o = avglab(
        &[
            "landscape",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--out",
            tmp.path().join("l").to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}
