use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn flowdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowdet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run flowdet")
}

fn ok(args: &[&str]) -> Output {
    let out = flowdet(args);
    assert!(
        out.status.success(),
        "flowdet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn no_args_prints_usage_and_exits_2() {
    let out = flowdet(&[]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stdout) + String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("Usage"));
}

#[test]
fn unknown_flag_exits_2() {
    assert_eq!(flowdet(&["plot", "--nope"]).status.code(), Some(2));
    assert_eq!(flowdet(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["train", "bench", "detect", "noise-gen", "frames", "plot"] {
        let out = ok(&[sub, "--help"]);
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
}

#[test]
fn train_with_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.flow"), dir.path().join("b.flow"));
    for out in [&a, &b] {
        ok(&[
            "train", "--family", "sas", "--alpha", "1.7", "--nrx", "2", "--train-samples", "2000",
            "--holdout-samples", "500", "--epochs", "2", "--batch", "256", "--seed", "7", "--out", p(out),
        ]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(&fs::read(&a).unwrap()[..8], b"FLOWCKPT");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[noise-gen]\nfamily = \"gaussian\"\ncount = 7\ndim = 3\nseed = 5\n").unwrap();
    let out = dir.path().join("n.bin");
    ok(&["noise-gen", "--config", p(&cfg), "--count", "4", "--out", p(&out)]);
    let bytes = fs::read(&out).unwrap();
    // 32-byte header, then count·dim complex values
    assert_eq!(bytes.len(), 32 + 4 * 3 * 16);
    assert_eq!(&bytes[..8], b"NOISEF64");
}

#[test]
fn noiseless_frames_detect_without_errors() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("f.bin");
    ok(&["frames", "--ntx", "3", "--nrx", "3", "--snr", "inf", "--count", "20", "--out", p(&frames)]);
    for det in ["E-MLE", "ML"] {
        let out = ok(&["detect", "--frames", p(&frames), "--detector", det]);
        let text = String::from_utf8(out.stdout).unwrap();
        assert_eq!(text.lines().count(), 20);
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["bit_errors"], 0);
            assert_eq!(v["evaluations"], 64);
        }
    }
}

#[test]
fn manfe_detect_needs_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("f.bin");
    ok(&["frames", "--snr", "10", "--count", "2", "--out", p(&frames)]);
    let out = flowdet(&["detect", "--frames", p(&frames), "--detector", "MANFE"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--checkpoint"));
}

const PLAN: &str = r#"
name = "tiny"
ntx = 2
nrx = 2
noise = { family = "gaussian", sigma = 1.0 }
axis = "snr"
values = [0, 5, 10]
detectors = ["E-MLE", "G-GAMP(30)"]
frames = 1000
seed = 9
"#;

#[test]
fn bench_plan_resume_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.toml");
    fs::write(&plan, PLAN).unwrap();
    let csv = dir.path().join("tiny.csv");
    ok(&["bench", "--plan", p(&plan), "--out", p(&csv)]);
    let first = fs::read(&csv).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "detector,family,alpha,sigma,snr_db,n_tx,n_rx,frames,bit_errors,ber,divergence_count,seed,wall_time_s"
    );
    assert_eq!(text.lines().count(), 7);
    ok(&["bench", "--plan", p(&plan), "--out", p(&csv)]);
    assert_eq!(fs::read(&csv).unwrap(), first);

    let svg = dir.path().join("tiny.svg");
    ok(&["plot", "--csv", p(&csv), "--out", p(&svg)]);
    let svg = fs::read_to_string(&svg).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<polyline").count(), 2);
}

#[test]
fn bench_fails_fast_on_missing_flow() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.toml");
    fs::write(&plan, PLAN.replace("\"G-GAMP(30)\"", "\"MANFE\"")).unwrap();
    let csv = dir.path().join("out.csv");
    let ckpts = dir.path().join("none");
    let out = flowdet(&["bench", "--plan", p(&plan), "--checkpoints", p(&ckpts), "--out", p(&csv)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no trained flow for family=gaussian"));
    assert!(!csv.exists());
}

#[test]
fn bench_lists_presets() {
    let out = ok(&["bench", "--list"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l == "fig3-desk"));
    assert_eq!(text.lines().count(), 8);
}

#[test]
fn empty_plot_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("empty.csv");
    fs::write(
        &csv,
        "detector,family,alpha,sigma,snr_db,n_tx,n_rx,frames,bit_errors,ber,divergence_count,seed,wall_time_s\n",
    )
    .unwrap();
    let out = flowdet(&["plot", "--csv", p(&csv), "--out", p(&dir.path().join("x.svg"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty plot"));
}
