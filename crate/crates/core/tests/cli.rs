use std::path::Path;
use std::process::{Command, Output};

fn uvcgan2(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uvcgan2"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn count_png(dir: &Path) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count()
}

#[test]
fn config_prints_the_resolved_preset() {
    let out = uvcgan2(&["config", "--preset", "toy", "--set", "train.seed=7"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("preset = toy"));
    assert!(text.contains("train.seed = 7"));
}

#[test]
fn config_errors_exit_with_2() {
    for set in ["bogus.key=1", "train.lr_gen=abc", "generator.image_size=30"] {
        let out = uvcgan2(&["config", "--preset", "toy", "--set", set]);
        assert_eq!(out.status.code(), Some(2), "{set}");
    }
    let out = uvcgan2(&["config", "--config", "/nonexistent/uvcgan2.cfg"]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.safetensors");
    let out = uvcgan2(&[
        "translate",
        "--checkpoint",
        missing.to_str().unwrap(),
        "--input",
        dir.path().to_str().unwrap(),
        "--output",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn make_toy_train_and_translate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy");
    let run = dir.path().join("run");
    let out = uvcgan2(&["make-toy", "--out", data.to_str().unwrap(), "--train-count", "4", "--test-count", "3"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(count_png(&data.join("trainA")), 4);
    assert_eq!(count_png(&data.join("testB")), 3);

    let root = format!("data.root={}", data.display());
    let out = uvcgan2(&[
        "train",
        "--preset",
        "toy",
        "--set",
        &root,
        "--set",
        "train.total_iters=2",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = String::from_utf8(out.stdout).unwrap().trim().to_string();
    assert!(Path::new(&ckpt).exists());

    let translated = dir.path().join("translated");
    let out = uvcgan2(&[
        "translate",
        "--checkpoint",
        &ckpt,
        "--input",
        data.join("testA").to_str().unwrap(),
        "--output",
        translated.to_str().unwrap(),
        "--direction",
        "ba",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(count_png(&translated), 3);
}
