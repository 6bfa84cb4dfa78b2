use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"dataset = "synthetic"
synthetic_per_combo = 16
z_dim = 4
batch_size = 8
base_channels = 8
residual_counts_g = [1, 1, 1]
residual_counts_dc = [1, 1, 1]
head_width = 16
iterations = 12
log_every = 4
e_window = 8
pretrain_epochs = 1.0
checkpoint_every = 6
seed = 5
"#;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_controlgan"))
        .args(args)
        .output()
        .expect("spawn binary")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let c = d.join("c.ckpt");
    let out = d.join("run");

    ok(&bin(&["pretrain", "--config", s(&cfg), "--out", s(&c)]));
    ok(&bin(&[
        "train",
        "--config",
        s(&cfg),
        "--classifier",
        s(&c),
        "--out",
        s(&out),
    ]));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);

    let ckpt = out.join("final.ckpt");
    let samples = d.join("s.csv");
    ok(&bin(&[
        "generate",
        s(&ckpt),
        "--labels",
        "1,-0.5",
        "-n",
        "5",
        "--out",
        s(&samples),
    ]));
    assert_eq!(
        std::fs::read_to_string(&samples).unwrap().lines().count(),
        6
    );

    let sw = d.join("sweep");
    ok(&bin(&[
        "sweep",
        s(&ckpt),
        "--label-index",
        "1",
        "--out",
        s(&sw),
    ]));
    let rows = std::fs::read_to_string(sw.join("sweep.csv")).unwrap();
    assert_eq!(rows.lines().count(), 8);
}

#[test]
fn exit_codes() {
    assert_eq!(bin(&["gradcheck", "--trials", "2"]).status.code(), Some(0));
    assert_eq!(bin(&["bogus"]).status.code(), Some(1));
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c");
    let missing = dir.path().join("none.toml");
    let o = bin(&["pretrain", "--config", s(&missing), "--out", s(&c)]);
    assert_eq!(o.status.code(), Some(3));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "dataset = \"synthetic\"\nlr_main = -1.0\n").unwrap();
    let o = bin(&["pretrain", "--config", s(&bad), "--out", s(&c)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn controlgan_mode_requires_classifier() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("r");
    let o = bin(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    ok(&bin(&[
        "train",
        "--config",
        s(&cfg),
        "--mode",
        "cgan",
        "--out",
        s(&out),
    ]));
}
