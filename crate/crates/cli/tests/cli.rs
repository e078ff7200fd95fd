use std::path::Path;
use std::process::{Command, Output};

fn sfuse(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfuse"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const SPEC: &str = r#"
samples = 2
width = 32
height = 32
max_objects = 1
feature_channels = 8

[camera]
fx = 30.0
fy = 30.0
cx = 15.5
cy = 15.5
baseline = 0.5
"#;

const TRAIN: &str = r#"
lr = 1e-3

[unet]
base_channels = [4, 8, 16]
"#;

fn dataset(dir: &Path) {
    std::fs::write(dir.join("spec.toml"), SPEC).unwrap();
    ok(&sfuse(&["synth", "--spec", "spec.toml", "--out", "data", "--seed", "5"], dir));
}

#[test]
fn synth_fuse_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    dataset(dir);
    let manifest = std::fs::read_to_string(dir.join("data/manifest.txt")).unwrap();
    assert!(manifest.contains("sample_000") && manifest.contains("sample_001"));

    ok(&sfuse(
        &[
            "fuse",
            "--inputs",
            "data/sample_000",
            "--camera",
            "data/sample_000/camera.cfg",
            "--debug-passthrough",
            "--out",
            "est",
        ],
        dir,
    ));
    for f in ["disp_0.png", "disp_1.png", "flow.png"] {
        assert!(dir.join("est").join(f).is_file());
    }
    let text = ok(&sfuse(&["eval", "--est", "est", "--gt", "data/sample_000/gt"], dir));
    assert_eq!(text.lines().count(), 12);
    assert!(text.lines().all(|l| l.split_whitespace().count() == 3));
    assert!(text.contains("D1 all 0.00"));

    let gt_self = ok(&sfuse(
        &[
            "eval",
            "--est",
            "data/sample_000/gt",
            "--gt",
            "data/sample_000/gt",
            "--fg-map",
            "data/sample_000/objects.png",
            "--json",
        ],
        dir,
    ));
    let v: serde_json::Value = serde_json::from_str(&gt_self).unwrap();
    assert_eq!(v["rates"]["SF"]["all"], 0.0);
}

#[test]
fn train_is_deterministic_and_checkpoint_fuses() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    dataset(dir);
    std::fs::write(dir.join("train.toml"), TRAIN).unwrap();
    let args = |out: &'static str| {
        vec!["train", "--data", "data", "--cfg", "train.toml", "--steps", "4", "--seed", "2", "--out", out]
    };
    ok(&sfuse(&args("a.ckpt"), dir));
    ok(&sfuse(&args("b.ckpt"), dir));
    let log_a = std::fs::read_to_string(dir.join("a.ckpt.loss.tsv")).unwrap();
    assert_eq!(log_a, std::fs::read_to_string(dir.join("b.ckpt.loss.tsv")).unwrap());
    assert_eq!(log_a.lines().count(), 5);
    assert_eq!(std::fs::read(dir.join("a.ckpt")).unwrap(), std::fs::read(dir.join("b.ckpt")).unwrap());

    let fuse = |out: &str| {
        sfuse(
            &[
                "fuse",
                "--inputs",
                "data/sample_001",
                "--camera",
                "data/sample_001/camera.cfg",
                "--ckpt",
                "a.ckpt",
                "--out",
                out,
            ],
            dir,
        )
    };
    ok(&fuse("x"));
    ok(&fuse("y"));
    for f in ["disp_0.png", "disp_1.png", "flow.png"] {
        assert_eq!(std::fs::read(dir.join("x").join(f)).unwrap(), std::fs::read(dir.join("y").join(f)).unwrap());
    }
}

#[test]
fn viz_writes_every_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    dataset(dir);
    let s = "data/sample_000";
    for (input, kind) in [
        (format!("{s}/gt/flow.png"), "flow"),
        (format!("{s}/gt_flow_fw.fgrid"), "flow"),
        (format!("{s}/gt/disp_0.png"), "disp"),
        (format!("{s}/emb_fw.fgrid"), "emb"),
    ] {
        ok(&sfuse(&["viz", "--in", &input, "--kind", kind, "--out", "v.png"], dir));
        let bytes = std::fs::read(dir.join("v.png")).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
    }
}

#[test]
fn exit_codes_distinguish_usage_and_format_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("camera.cfg"), "fx = 1\nfy = 1\ncx = 0\ncy = 0\nbaseline = 1\n").unwrap();
    std::fs::write(dir.join("junk.fgrid"), b"not a grid").unwrap();
    std::fs::write(dir.join("bad.toml"), "samples = [").unwrap();
    std::fs::write(dir.join("bad.cfg"), "fx: 1\n").unwrap();
    let code = |args: &[&str]| sfuse(args, dir).status.code();

    assert_eq!(code(&["frobnicate"]), Some(2));
    assert_eq!(code(&["fuse", "--inputs", ".", "--camera", "camera.cfg", "--out", "o"]), Some(2));
    assert_eq!(
        code(&["fuse", "--inputs", "missing", "--camera", "camera.cfg", "--out", "o", "--debug-passthrough"]),
        Some(2)
    );
    assert_eq!(code(&["eval", "--est", "nowhere", "--gt", "nowhere"]), Some(2));
    assert_eq!(code(&["train", "--data", "nowhere", "--steps", "1", "--out", "c"]), Some(2));
    assert_eq!(code(&["viz", "--in", "junk.fgrid", "--kind", "emb", "--out", "v.png"]), Some(3));
    assert_eq!(code(&["synth", "--spec", "bad.toml", "--out", "d"]), Some(3));
    assert_eq!(
        code(&["fuse", "--inputs", ".", "--camera", "bad.cfg", "--out", "o", "--debug-passthrough"]),
        Some(3)
    );
}
