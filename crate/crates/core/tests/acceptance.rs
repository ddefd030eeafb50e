//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints its PASS/FAIL line; exits non-zero if any fails.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use chronochroma::colorspace::{lab_pixel_to_rgb, rgb_pixel_to_lab, ChromaFrame, NormalizedClip, RgbFrame};
use chronochroma::dataset::{split_train_test, synth_generate, windows, SynthConfig};
use chronochroma::inference::{colorize_frames, grayscale_frames, sliding_window_estimates, Prior};
use chronochroma::metrics::{
    color_consistency, evaluate, phi, psnr, raw_accuracy, MetricReport, PHI_EPSILON, RA_THETA_MAX,
};
use chronochroma::model::{
    discriminator_forward, generator_forward, init_params, DiscriminatorConfig, GeneratorConfig, ModelParams, Mode,
};
use chronochroma::training::{discriminator_gradients, discriminator_objective, generator_gradients, generator_objective, train, TrainConfig};
use common::*;
use rand::Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn metric_oracles() -> Outcome {
    const TOL: f64 = 1e-9;
    let mut r = rng(100);
    let mut worst: f64 = 0.0;
    let mut spent = Duration::ZERO;
    for trial in 0..50 {
        let gt_rgb: Vec<RgbFrame> = (0..2).map(|_| random_rgb(&mut r, 4, 4)).collect();
        let pred_rgb: Vec<RgbFrame> = (0..2).map(|_| random_rgb(&mut r, 4, 4)).collect();
        // Half the chroma instances are small perturbations so RA exercises
        // distances below the threshold as well as above it.
        let gt: Vec<ChromaFrame> = (0..2).map(|_| random_chroma(&mut r, 4, 4)).collect();
        let pred: Vec<ChromaFrame> = if trial % 2 == 0 {
            (0..2).map(|_| random_chroma(&mut r, 4, 4)).collect()
        } else {
            gt.iter()
                .map(|g| {
                    let a = g.a.iter().map(|v| (v + r.random_range(-60.0..60.0)).clamp(-128.0, 127.0)).collect();
                    let b = g.b.iter().map(|v| (v + r.random_range(-60.0..60.0)).clamp(-128.0, 127.0)).collect();
                    ChromaFrame::new(4, 4, a, b).unwrap()
                })
                .collect()
        };

        let start = Instant::now();
        let lib_psnr: Vec<f64> = pred_rgb.iter().zip(&gt_rgb).map(|(p, g)| psnr(p, g).unwrap()).collect();
        let lib_ra = raw_accuracy(&pred, &gt, RA_THETA_MAX).unwrap();
        let lib_cc = color_consistency(&gt, &pred).unwrap();
        spent += start.elapsed();

        for (k, v) in lib_psnr.iter().enumerate() {
            worst = worst.max((v - oracle_psnr(&pred_rgb[k], &gt_rgb[k])).abs());
        }
        worst = worst.max((lib_ra - oracle_raw_accuracy(&pred, &gt, RA_THETA_MAX)).abs());
        worst = worst.max((lib_cc - oracle_cc(&gt, &pred)).abs());
    }
    check(worst <= TOL, || format!("max deviation {worst:e} > {TOL:e}"))?;
    check(spent < Duration::from_secs(1), || format!("runtime {spent:?} >= 1 s"))?;
    Ok(format!("50 instances, max |lib - oracle| = {worst:.1e} (tol 1e-9), runtime {spent:?} (< 1 s)"))
}

fn shifted(g: &ChromaFrame, da: f64, db: f64) -> ChromaFrame {
    ChromaFrame::new(
        g.width,
        g.height,
        g.a.iter().map(|v| v + da).collect(),
        g.b.iter().map(|v| v + db).collect(),
    )
    .unwrap()
}

fn closed_form_metrics() -> Outcome {
    let mut r = rng(200);
    let rgb: Vec<RgbFrame> = (0..3).map(|_| random_rgb(&mut r, 8, 8)).collect();
    let same: MetricReport = evaluate(&rgb, &rgb).map_err(|e| e.to_string())?;
    check(same.mean_psnr == 100.0, || format!("pred=gt PSNR {} != 100 (cap)", same.mean_psnr))?;
    check(same.raw_accuracy == 1.0, || format!("pred=gt RA {}", same.raw_accuracy))?;
    check(same.mean_cc == Some(1.0), || format!("pred=gt CC {:?}", same.mean_cc))?;

    // Chroma kept away from the clamp bounds so a shift of norm 30 survives.
    let gt: Vec<ChromaFrame> = (0..3)
        .map(|_| {
            let a = (0..64).map(|_| r.random_range(-80.0..80.0)).collect();
            let b = (0..64).map(|_| r.random_range(-80.0..80.0)).collect();
            ChromaFrame::new(8, 8, a, b).unwrap()
        })
        .collect();
    let offset: Vec<ChromaFrame> = gt.iter().map(|g| shifted(g, 18.0, 24.0)).collect();
    let ra = raw_accuracy(&offset, &gt, RA_THETA_MAX).unwrap();
    check((ra * 100.0 - 80.0).abs() <= 1e-6, || format!("offset-30 RA {}% != 80%", ra * 100.0))?;

    let still = vec![gt[0].clone(), gt[0].clone()];
    let off = vec![shifted(&gt[0], -12.0, 9.0), shifted(&gt[0], -12.0, 9.0)];
    let cc = color_consistency(&still, &off).unwrap();
    check((cc - 1.0 / 60.0).abs() <= 1e-9, || format!("static-scene CC {cc} != 1/60"))?;
    Ok(format!(
        "pred=gt: PSNR 100 dB (cap), RA 100%, CC 100%; offset 30: RA {:.6}% (80 +/- 1e-6); static scene: CC {cc:.12} (1/60 +/- 1e-9)",
        ra * 100.0
    ))
}

fn phi_boundaries() -> Outcome {
    let zero = phi(&[0.0; 16], PHI_EPSILON).unwrap();
    check(zero.iter().all(|&v| v == 1.0), || format!("all-zero -> {zero:?}"))?;
    for c in [1e-6, 0.37, 1.0, 30.0, 150.0, 255.0] {
        let out = phi(&[c; 16], PHI_EPSILON).unwrap();
        check(out.iter().all(|&v| v == 1.0 / 60.0), || format!("constant {c} -> {out:?}"))?;
    }
    Ok("zeros -> 1 exactly; constants {1e-6 .. 255} -> 1/60 exactly (eps 1e-8)".into())
}

fn colorspace_roundtrip() -> Outcome {
    let levels: Vec<u8> = (0..17).map(|i| ((i * 255) as f64 / 16.0).round() as u8).collect();
    let mut worst = 0u8;
    for &r in &levels {
        for &g in &levels {
            for &b in &levels {
                let back = lab_pixel_to_rgb(rgb_pixel_to_lab([r, g, b]));
                for (x, y) in back.iter().zip([r, g, b]) {
                    worst = worst.max(x.abs_diff(y));
                }
            }
        }
    }
    check(worst <= 1, || format!("17^3 lattice worst channel error {worst}"))?;
    let mut chroma: f64 = 0.0;
    for v in 0..=255u8 {
        let lab = rgb_pixel_to_lab([v, v, v]);
        chroma = chroma.max(lab[1].abs()).max(lab[2].abs());
    }
    check(chroma < 0.01, || format!("achromatic |a|,|b| up to {chroma}"))?;
    Ok(format!(
        "17^3 lattice worst error {worst} (<= 1); black/white/grays max |a|,|b| = {chroma:.1e} (< 0.01)"
    ))
}

fn gradient_verification() -> Outcome {
    const TOL: f64 = 1e-3;
    let mut r = rng(300);
    let batch: Vec<_> = (0..2).map(|_| random_sample(&mut r, 1, 8, 8)).collect();
    let mut p = tiny_model(1, 301);
    let (_, g1) = generator_gradients(&mut p, &batch, 1.0).unwrap();
    let (_, g0) = generator_gradients(&mut p, &batch, 0.0).unwrap();
    let l1: Vec<f64> = g1.iter().zip(&g0).map(|(a, b)| a - b).collect();
    let idx = sample_indices(&mut r, l1.len(), 120);
    let l1_check = finite_difference_check(&mut p, &l1, &idx, 1e-6, generator_params, |p| {
        generator_objective(p, &batch, 0.0).unwrap().l1
    });
    let idx = sample_indices(&mut r, g0.len(), 120);
    let adv_check = finite_difference_check(&mut p, &g0, &idx, 1e-6, generator_params, |p| {
        generator_objective(p, &batch, 0.0).unwrap().adversarial
    });
    let (_, gd) = discriminator_gradients(&mut p, &batch).unwrap();
    let idx = sample_indices(&mut r, gd.len(), 120);
    let d_check = finite_difference_check(&mut p, &gd, &idx, 1e-6, discriminator_params, |p| {
        discriminator_objective(p, &batch).unwrap()
    });
    let worst = l1_check.worst.max(adv_check.worst).max(d_check.worst);
    let count = l1_check.checked.min(adv_check.checked).min(d_check.checked);
    check(count >= 100, || format!("only {count} weights sampled"))?;
    check(worst < TOL, || {
        format!(
            "relative error l1 {:.2e}, adversarial {:.2e}, discriminator {:.2e} (tol 1e-3)",
            l1_check.worst, adv_check.worst, d_check.worst
        )
    })?;
    Ok(format!(
        "1-level model, 8x8x1 clips: max rel. error l1 {:.1e} / adv {:.1e} / disc {:.1e} over {}+{}+{} weights (tol 1e-3)",
        l1_check.worst, adv_check.worst, d_check.worst, l1_check.checked, adv_check.checked, d_check.checked
    ))
}

fn shape_invariants() -> Outcome {
    let mut p = init_params(GeneratorConfig::default(), DiscriminatorConfig::default(), 400).map_err(|e| e.to_string())?;
    let mut r = rng(401);
    let x = NormalizedClip::new(1, 3, 64, 64, (0..3 * 64 * 64).map(|_| r.random_range(-1.0..=1.0)).collect()).unwrap();
    let y = generator_forward(&x, &mut p, Mode::Eval).map_err(|e| e.to_string())?;
    check(y.shape() == (64, 64, 3, 2), || format!("generator output {:?}", y.shape()))?;
    check(y.data().iter().all(|v| v.abs() < 1.0), || "generator output leaves (-1, 1)".into())?;
    let probs = discriminator_forward(&[y], None, &mut p, Mode::Eval).map_err(|e| e.to_string())?;
    check(probs.len() == 1 && probs[0] > 0.0 && probs[0] < 1.0, || format!("discriminator {probs:?}"))?;
    drop(p);

    let tiny: ModelParams = tiny_model(2, 402);
    let lab: Vec<_> = (0..16)
        .map(|_| chronochroma::colorspace::rgb_to_lab(&random_rgb(&mut r, 4, 4)))
        .collect();
    let mut pairs = 0;
    for n in 1..=16 {
        for c in 1..=n {
            let est = sliding_window_estimates(&lab[..n], &tiny.generator, c).map_err(|e| e.to_string())?;
            let total: usize = est.counts().iter().sum();
            check(total == c * (n - c + 1), || format!("N={n} C={c}: {total} estimates"))?;
            pairs += 1;
        }
    }
    Ok(format!(
        "default generator (64,64,3,1) -> (64,64,3,2) within (-1,1); discriminator p = {:.6} in (0,1); estimate count C(N-C+1) for all {pairs} (N,C) pairs",
        probs[0]
    ))
}

struct DeskRun {
    report: MetricReport,
    train_time: Duration,
}

fn desk_model(window: usize, steps: u64) -> Result<DeskRun, String> {
    let seq = synth_generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let (train_seq, test_seq) = split_train_test(&seq, 0.75).map_err(|e| e.to_string())?;
    let samples = windows(&train_seq, window).map_err(|e| e.to_string())?;
    let (g, d) = toy_configs();
    let cfg = TrainConfig {
        lambda_l1: 100.0,
        batch_size: 4,
        num_steps: steps,
        checkpoint_every: steps.max(1),
        seed: 0,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let out = train(&samples, init_params(g, d, 0).map_err(|e| e.to_string())?, None, &cfg, dir.path())
        .map_err(|e| e.to_string())?;
    let train_time = start.elapsed();
    let lab = test_seq.to_lab();
    let pred = colorize_frames(&lab, &out.params.generator, window, &Prior::Uninformative).map_err(|e| e.to_string())?;
    Ok(DeskRun {
        report: evaluate(&pred, &test_seq.frames).map_err(|e| e.to_string())?,
        train_time,
    })
}

const DESK_STEPS: u64 = 600;

fn desk_ordering() -> Outcome {
    let start = Instant::now();
    let seq = synth_generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let (_, test_seq) = split_train_test(&seq, 0.75).map_err(|e| e.to_string())?;
    let gray = evaluate(&grayscale_frames(&test_seq.to_lab()).unwrap(), &test_seq.frames).map_err(|e| e.to_string())?;
    let c3 = desk_model(3, DESK_STEPS)?;
    let c1 = desk_model(1, DESK_STEPS)?;
    let elapsed = start.elapsed();
    println!("      {}", gray.summary_row("grayscale"));
    println!("      {}  (trained {:?})", c1.report.summary_row("C=1"), c1.train_time);
    println!("      {}  (trained {:?})", c3.report.summary_row("C=3"), c3.train_time);

    let (m, g) = (&c3.report, &gray);
    check(m.mean_psnr > g.mean_psnr, || format!("PSNR {} <= grayscale {}", m.mean_psnr, g.mean_psnr))?;
    check(m.raw_accuracy > g.raw_accuracy, || format!("RA {} <= grayscale {}", m.raw_accuracy, g.raw_accuracy))?;
    check(m.mean_cc > g.mean_cc, || format!("CC {:?} <= grayscale {:?}", m.mean_cc, g.mean_cc))?;
    check(m.mean_cc >= c1.report.mean_cc, || {
        format!("CC(C=3) {:?} < CC(C=1) {:?}", m.mean_cc, c1.report.mean_cc)
    })?;
    check(elapsed < Duration::from_secs(3 * 3600), || format!("runtime {elapsed:?} exceeds 3 h"))?;
    Ok(format!(
        "32x32, 200 frames, 75/25, lambda 100, {DESK_STEPS} steps: model beats grayscale on PSNR/RA/CC and CC(C=3) {:.2}% >= CC(C=1) {:.2}%; runtime {:.0?}",
        m.mean_cc.unwrap() * 100.0,
        c1.report.mean_cc.unwrap() * 100.0,
        elapsed
    ))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_chronochroma"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(root: &Path) -> Result<(), String> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (frames, run, colored, report) = (root.join("frames"), root.join("run"), root.join("colored"), root.join("report"));
    cli(&["synth", "--output", &s(&frames), "--frames", "40", "--seed", "7"])?;
    cli(&[
        "train", "--input", &s(&frames), "--output", &s(&run), "--steps", "10", "--batch-size", "4", "--seed", "7",
        "--checkpoint-every", "5", "--gen-depth", "5", "--gen-filters", "16", "--gen-max-filters", "64",
        "--disc-layers", "3", "--disc-filters", "16", "--disc-max-filters", "64",
    ])?;
    cli(&[
        "colorize", "--input", &s(&run.join("test_frames")), "--checkpoint", &s(&run.join("final.ckpt")),
        "--output", &s(&colored),
    ])?;
    cli(&["evaluate", "--input", &s(&colored), "--reference", &s(&run.join("test_frames")), "--output", &s(&report)])
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn end_to_end_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path())?;
    pipeline(b.path())?;
    // The manifest records the source directory, which differs between runs.
    let strip = |files: Vec<(String, Vec<u8>)>| -> Vec<(String, Vec<u8>)> {
        files
            .into_iter()
            .map(|(name, bytes)| {
                if name.ends_with("manifest.txt") {
                    let text = String::from_utf8(bytes).unwrap();
                    let kept: String = text.lines().filter(|l| !l.starts_with("source=")).collect::<Vec<_>>().join("\n");
                    (name, kept.into_bytes())
                } else {
                    (name, bytes)
                }
            })
            .collect()
    };
    let (ta, tb) = (strip(tree(a.path())), strip(tree(b.path())));
    check(ta.len() == tb.len(), || format!("{} vs {} files", ta.len(), tb.len()))?;
    for ((na, ba), (nb, bb)) in ta.iter().zip(&tb) {
        check(na == nb && ba == bb, || format!("{na} differs from {nb}"))?;
    }
    Ok(format!("synth -> train -> colorize -> evaluate twice: {} files byte-identical", ta.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("metric oracles", metric_oracles),
        ("closed-form metrics", closed_form_metrics),
        ("phi boundaries", phi_boundaries),
        ("colorspace roundtrip", colorspace_roundtrip),
        ("gradient verification", gradient_verification),
        ("shape and range invariants", shape_invariants),
        ("desk-scale ordering", desk_ordering),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS [{}] {name} ({:.1?}): {detail}", i + 1, start.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name} ({:.1?}): {why}", i + 1, start.elapsed());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
