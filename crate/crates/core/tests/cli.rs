use std::path::Path;

use wmd::cli::main_with_args;

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("wmd.toml");
    std::fs::write(
        &path,
        r#"
[synth]
participants = 3
speeds = [1.0]
circuits = ["right_tight"]
repetitions = 1
seed = 2

[synth.scene]
size = 32
duration_scale = 0.15

[prepare]
frames_per_segment = 2
split = { kind = "ratios", train = 0.34, val = 0.33, test = 0.33 }

[encoder]
input_size = 32

[model]
backbone = "vgg_style"
scale = 0.0625
input_size = 32

[train]
max_epochs = 1
batch_size = 8
"#,
    )
    .unwrap();
    path
}

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("wmd").chain(args.iter().copied()))
}

#[test]
fn stages_run_in_order_with_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let cache = dir.path().join("cache");
    let base = ["--quiet", "--config", cfg.to_str().unwrap(), "--cache-dir", cache.to_str().unwrap()];
    let with = |cmd: &[&str]| run(&[&base[..], cmd].concat());

    assert_eq!(with(&["encode"]), 3, "encode before prepare");
    for cmd in [&["synth"][..], &["prepare"], &["encode"], &["masks"], &["train", "--task", "cls"], &["eval"], &["focus"]] {
        assert_eq!(with(cmd), 0, "{cmd:?}");
    }
    assert_eq!(with(&["simulate", "--plot"]), 0);
    assert_eq!(with(&["report"]), 0);
    assert!(cache.join("report/report.json").exists());
    let before = std::fs::metadata(cache.join("runs/cls_vgg_style/best.ckpt")).unwrap().modified().unwrap();
    assert_eq!(with(&["train", "--task", "cls"]), 0);
    let after = std::fs::metadata(cache.join("runs/cls_vgg_style/best.ckpt")).unwrap().modified().unwrap();
    assert_eq!(before, after, "an unchanged rerun must not rewrite");
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().to_str().unwrap();
    assert_eq!(run(&["--quiet", "--cache-dir", cache, "synth", "--speeds", "0.2"]), 2);
    assert_eq!(run(&["--quiet", "--cache-dir", cache, "--input-size", "64", "train", "--task", "cls", "--lr=-1"]), 2);
    assert_eq!(run(&["--quiet", "--cache-dir", cache, "--config", "/nonexistent/wmd.toml", "eval"]), 2);
    assert_eq!(run(&["--quiet", "--cache-dir", cache, "eval"]), 3);
    assert_eq!(run(&["frobnicate"]), 2);
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["train", "--help"]), 0);
}
