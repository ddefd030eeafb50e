#![allow(dead_code)]

use chronochroma::colorspace::{ChromaFrame, NormalizedClip, RgbFrame};
use chronochroma::dataset::ClipSample;
use chronochroma::model::{init_params, DiscriminatorConfig, GeneratorConfig, ModelParams, Param};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One encoder/decoder level, a handful of filters.
pub fn tiny_model(depth: usize, seed: u64) -> ModelParams {
    let g = GeneratorConfig {
        depth,
        base_filters: 4,
        max_filters: 8,
        ..GeneratorConfig::default()
    };
    let d = DiscriminatorConfig {
        num_conv_layers: 2,
        base_filters: 3,
        max_filters: 6,
        ..DiscriminatorConfig::default()
    };
    init_params(g, d, seed).unwrap()
}

/// The model used by the desk-scale experiments.
pub fn toy_configs() -> (GeneratorConfig, DiscriminatorConfig) {
    (
        GeneratorConfig {
            depth: 5,
            base_filters: 16,
            max_filters: 64,
            ..GeneratorConfig::default()
        },
        DiscriminatorConfig {
            num_conv_layers: 3,
            base_filters: 16,
            max_filters: 64,
            ..DiscriminatorConfig::default()
        },
    )
}

pub fn random_sample(rng: &mut impl Rng, frames: usize, h: usize, w: usize) -> ClipSample {
    let n = frames * h * w;
    let x = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = (0..2 * n).map(|_| rng.random_range(-0.8..0.8)).collect();
    ClipSample {
        x: NormalizedClip::new(1, frames, h, w, x).unwrap(),
        y: NormalizedClip::new(2, frames, h, w, y).unwrap(),
        start_index: 0,
    }
}

fn locate(params: &mut [&mut Param], flat: usize) -> (usize, usize) {
    let mut i = flat;
    for (k, p) in params.iter().enumerate() {
        if i < p.len() {
            return (k, i);
        }
        i -= p.len();
    }
    panic!("flat index {flat} out of range");
}

pub fn get_param(mut params: Vec<&mut Param>, flat: usize) -> f64 {
    let (k, i) = locate(&mut params, flat);
    params[k].value[i]
}

pub fn set_param(mut params: Vec<&mut Param>, flat: usize, v: f64) {
    let (k, i) = locate(&mut params, flat);
    params[k].value[i] = v;
}

/// Relative error with a floor on the denominator so that gradients that
/// are zero analytically (e.g. conv bias feeding batch norm) compare against
/// finite-difference round-off sensibly.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub struct GradCheck {
    pub checked: usize,
    pub worst: f64,
}

/// Central differences of `objective` with respect to sampled flat parameter
/// indices, compared against `analytic`.
pub fn finite_difference_check(
    params: &mut ModelParams,
    analytic: &[f64],
    indices: &[usize],
    h: f64,
    select: fn(&mut ModelParams) -> Vec<&mut Param>,
    mut objective: impl FnMut(&mut ModelParams) -> f64,
) -> GradCheck {
    let mut worst: f64 = 0.0;
    for &i in indices {
        let orig = get_param(select(params), i);
        set_param(select(params), i, orig + h);
        let plus = objective(params);
        set_param(select(params), i, orig - h);
        let minus = objective(params);
        set_param(select(params), i, orig);
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    GradCheck {
        checked: indices.len(),
        worst,
    }
}

pub fn generator_params(p: &mut ModelParams) -> Vec<&mut Param> {
    p.generator.params_mut()
}

pub fn discriminator_params(p: &mut ModelParams) -> Vec<&mut Param> {
    p.discriminator.params_mut()
}

pub fn sample_indices(rng: &mut impl Rng, total: usize, count: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, total, count.min(total)).into_vec()
}

pub fn random_chroma(rng: &mut impl Rng, w: usize, h: usize) -> ChromaFrame {
    let n = w * h;
    ChromaFrame::new(
        w,
        h,
        (0..n).map(|_| rng.random_range(-128.0..127.0)).collect(),
        (0..n).map(|_| rng.random_range(-128.0..127.0)).collect(),
    )
    .unwrap()
}

pub fn random_rgb(rng: &mut impl Rng, w: usize, h: usize) -> RgbFrame {
    RgbFrame::new(w, h, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap()
}

// Naive metric oracles, written from the definitions with explicit loops.

pub fn oracle_psnr(pred: &RgbFrame, gt: &RgbFrame) -> f64 {
    let mut sq = 0.0;
    let mut count = 0.0;
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            let (p, g) = (pred.pixel(x, y), gt.pixel(x, y));
            for c in 0..3 {
                let d = p[c] as f64 - g[c] as f64;
                sq += d * d;
                count += 1.0;
            }
        }
    }
    if sq == 0.0 {
        return 100.0;
    }
    (10.0 * (255.0f64 * 255.0 / (sq / count)).log10()).min(100.0)
}

/// Area under the accuracy-vs-threshold step function, integrated exactly
/// between consecutive sorted distances, divided by `theta_max`.
pub fn oracle_raw_accuracy(pred: &[ChromaFrame], gt: &[ChromaFrame], theta_max: f64) -> f64 {
    let mut d = Vec::new();
    for (p, g) in pred.iter().zip(gt) {
        for i in 0..g.a.len() {
            d.push(((p.a[i] - g.a[i]).powi(2) + (p.b[i] - g.b[i]).powi(2)).sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let n = d.len() as f64;
    let mut area = 0.0;
    let mut prev = 0.0;
    for (k, &dk) in d.iter().enumerate() {
        if dk >= theta_max {
            break;
        }
        // acc(θ) = k / n on [prev, dk): k pixels have distance < θ.
        area += (k as f64 / n) * (dk - prev);
        prev = dk;
    }
    let below = d.iter().filter(|&&x| x < theta_max).count() as f64;
    area += (below / n) * (theta_max - prev);
    area / theta_max
}

fn oracle_phi(m: &[f64]) -> Vec<f64> {
    let mut max = 0.0;
    for &v in m {
        if v > max {
            max = v;
        }
    }
    m.iter().map(|&v| 1.0 / (60.0 * v / (max + 1e-8) + 1.0).floor()).collect()
}

pub fn oracle_cc(gt: &[ChromaFrame], pred: &[ChromaFrame]) -> f64 {
    let mut total = 0.0;
    for t in 0..gt.len() - 1 {
        let n = gt[t].a.len();
        let mut e0 = vec![0.0; n];
        let mut e1 = vec![0.0; n];
        let mut ec = vec![0.0; n];
        for i in 0..n {
            let dist = |p: &ChromaFrame, q: &ChromaFrame| ((p.a[i] - q.a[i]).powi(2) + (p.b[i] - q.b[i]).powi(2)).sqrt();
            e0[i] = dist(&gt[t], &pred[t]);
            e1[i] = dist(&gt[t + 1], &pred[t + 1]);
            ec[i] = (dist(&gt[t], &gt[t + 1]) - dist(&pred[t], &pred[t + 1])).abs();
        }
        let (a0, a1, ac) = (oracle_phi(&e0), oracle_phi(&e1), oracle_phi(&ec));
        let mut s = 0.0;
        for i in 0..n {
            s += (a0[i] + a1[i]) / 2.0 * ac[i];
        }
        total += s / n as f64;
    }
    total / (gt.len() - 1) as f64
}
