use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use chronochroma::metrics::parse_key_values;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chronochroma"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(args: &[&str], needle: &str) {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(needle), "{args:?}: {err}");
}

fn report(dir: &Path) -> HashMap<String, String> {
    parse_key_values(&fs::read_to_string(dir.join("report.txt")).unwrap())
        .into_iter()
        .collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn count_pngs(dir: &Path) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count()
}

const TINY_MODEL: &[&str] = &[
    "--gen-depth",
    "2",
    "--gen-filters",
    "4",
    "--gen-max-filters",
    "8",
    "--disc-layers",
    "2",
    "--disc-filters",
    "4",
    "--disc-max-filters",
    "8",
];

#[test]
fn synth_defaults_and_determinism() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    ok(&["synth", "--output", p(&a)]);
    ok(&["synth", "--output", p(&b)]);
    assert_eq!(count_pngs(&a), 200);
    for name in ["frame_000001.png", "frame_000200.png"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
    }
    let img = image::open(a.join("frame_000001.png")).unwrap();
    assert_eq!((img.width(), img.height()), (32, 32));
}

#[test]
fn synth_reports_unwritable_path() {
    let root = tempfile::tempdir().unwrap();
    let file = root.path().join("occupied");
    fs::write(&file, "x").unwrap();
    let target = file.join("frames");
    fails_with(&["synth", "--output", p(&target)], "occupied");
    fails_with(&["synth", "--output", p(&root.path().join("s")), "--height", "4"], "16x16");
}

#[test]
fn full_pipeline() {
    let root = tempfile::tempdir().unwrap();
    let frames = root.path().join("frames");
    let run_dir = root.path().join("run");
    ok(&["synth", "--output", p(&frames), "--frames", "12", "--seed", "3"]);

    let mut args = vec![
        "train", "--input", p(&frames), "--output", p(&run_dir), "--steps", "2", "--batch-size", "2", "--seed", "1",
    ];
    args.extend_from_slice(TINY_MODEL);
    let stdout = ok(&args);
    assert!(stdout.contains("step=2"), "{stdout}");
    let test_frames = run_dir.join("test_frames");
    assert_eq!(count_pngs(&test_frames), 3);
    let ckpt = run_dir.join("final.ckpt");
    assert!(ckpt.exists());
    assert_eq!(fs::read_to_string(run_dir.join("losses.log")).unwrap().lines().count(), 2);
    assert!(fs::read_to_string(run_dir.join("config.toml")).unwrap().contains("depth = 2"));

    let colored = root.path().join("colored");
    ok(&["colorize", "--input", p(&test_frames), "--checkpoint", p(&ckpt), "--output", p(&colored)]);
    assert_eq!(count_pngs(&colored), 3);
    let manifest = fs::read_to_string(colored.join("manifest.txt")).unwrap();
    assert!(manifest.contains("window=3") && manifest.contains("frames=3"));

    let per_frame = root.path().join("per_frame");
    ok(&["colorize", "--input", p(&test_frames), "--checkpoint", p(&ckpt), "--output", p(&per_frame), "--window", "1"]);
    assert_eq!(count_pngs(&per_frame), 3);

    fails_with(
        &["colorize", "--input", p(&test_frames), "--checkpoint", p(&ckpt), "--output", p(&root.path().join("x")), "--window", "4"],
        "too short",
    );

    let report_dir = root.path().join("report");
    let row = ok(&["evaluate", "--input", p(&colored), "--reference", p(&test_frames), "--output", p(&report_dir)]);
    assert!(row.contains("PSNR") && row.contains("RA") && row.contains("CC"), "{row}");
    let report = report(&report_dir);
    let psnr: f64 = report["mean_psnr_db"].parse().unwrap();
    assert!(row.contains(&format!("PSNR {psnr:.2} dB")), "{row}");
    let csv = fs::read_to_string(report_dir.join("per_frame.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn zero_steps_and_missing_input() {
    let root = tempfile::tempdir().unwrap();
    let frames = root.path().join("frames");
    ok(&["synth", "--output", p(&frames), "--frames", "8"]);
    let run_dir = root.path().join("run");
    let mut args = vec!["train", "--input", p(&frames), "--output", p(&run_dir), "--steps", "0", "--batch-size", "2"];
    args.extend_from_slice(TINY_MODEL);
    ok(&args);
    assert!(run_dir.join("final.ckpt").exists());

    let missing = root.path().join("nope");
    fails_with(&["train", "--input", p(&missing), "--output", p(&run_dir)], "nope");
    fails_with(&["colorize", "--input", p(&frames), "--checkpoint", p(&missing), "--output", p(&run_dir)], "nope");
}

#[test]
fn evaluate_identity_and_grayscale() {
    let root = tempfile::tempdir().unwrap();
    let frames = root.path().join("frames");
    ok(&["synth", "--output", p(&frames), "--frames", "5"]);
    let same = ok(&["evaluate", "--input", p(&frames), "--reference", p(&frames), "--output", p(&root.path().join("r1"))]);
    assert!(same.contains("PSNR 100.00 dB | RA 100.00 % | CC 100.00 %"), "{same}");

    let gray = root.path().join("gray");
    ok(&["colorize", "--input", p(&frames), "--output", p(&gray), "--baseline-grayscale"]);
    let dir = root.path().join("r2");
    ok(&["evaluate", "--input", p(&gray), "--reference", p(&frames), "--output", p(&dir)]);
    let report = report(&dir);
    assert!(report["mean_psnr_db"].parse::<f64>().unwrap() < 100.0);
    assert!(report["raw_accuracy"].parse::<f64>().unwrap() < 1.0);
    assert!(report["mean_cc"].parse::<f64>().unwrap() < 1.0);

    let short = root.path().join("short");
    ok(&["synth", "--output", p(&short), "--frames", "4"]);
    fails_with(
        &["evaluate", "--input", p(&short), "--reference", p(&frames), "--output", p(&root.path().join("r3"))],
        "dimension",
    );
}
