//! Colorization quality metrics: PSNR, Raw Accuracy and Color Consistency.
//!
//! PSNR is computed on RGB frames. Raw Accuracy and Color Consistency work on
//! the `a`, `b` chrominance planes in Lab units.

use std::fmt::Write as _;
use std::path::Path;

use crate::colorspace::{rgb_to_lab, ChromaFrame, RgbFrame};
use crate::error::{Error, Result};

/// PSNR reported for identical frames.
pub const PSNR_CAP_DB: f64 = 100.0;
/// Upper end of the Raw Accuracy threshold sweep, in ab distance units.
pub const RA_THETA_MAX: f64 = 150.0;
/// `ε` in the distance-to-similarity map.
pub const PHI_EPSILON: f64 = 1e-8;
/// Number of similarity levels produced by [`phi`].
pub const PHI_LEVELS: f64 = 60.0;

/// Peak signal-to-noise ratio over all pixels and channels, capped at
/// [`PSNR_CAP_DB`].
pub fn psnr(pred: &RgbFrame, gt: &RgbFrame) -> Result<f64> {
    if !pred.same_dims(gt) {
        return Err(Error::Dimension(format!(
            "psnr: {}x{} vs {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let sse: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| {
            let d = p as f64 - g as f64;
            d * d
        })
        .sum();
    let mse = sse / pred.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (255.0 * 255.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn check_chroma_seqs(pred: &[ChromaFrame], gt: &[ChromaFrame], what: &str) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!(
            "{what}: {} predicted frames vs {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    for (t, (p, g)) in pred.iter().zip(gt).enumerate() {
        if !p.same_dims(g) || p.len() != g.len() {
            return Err(Error::Dimension(format!(
                "{what}: frame {t} is {}x{} vs {}x{}",
                p.width, p.height, g.width, g.height
            )));
        }
    }
    Ok(())
}

/// Raw Accuracy: the normalized area under `acc(θ)` for `θ ∈ [0, theta_max]`,
/// where `acc(θ)` is the fraction of pixels whose ab error is below `θ`.
///
/// The integral of a step function over the empirical distances is exact:
/// each pixel at distance `d` contributes `max(0, 1 - d / theta_max)`.
pub fn raw_accuracy(pred: &[ChromaFrame], gt: &[ChromaFrame], theta_max: f64) -> Result<f64> {
    if !(theta_max > 0.0) {
        return Err(Error::InvalidInput(format!("theta_max must be positive, got {theta_max}")));
    }
    check_chroma_seqs(pred, gt, "raw_accuracy")?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        for i in 0..p.len() {
            let d = (p.a[i] - g.a[i]).hypot(p.b[i] - g.b[i]);
            total += (1.0 - d / theta_max).max(0.0);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput("raw_accuracy over zero pixels".into()));
    }
    Ok(total / count as f64)
}

/// Distance-to-similarity map `⌊60·x / (max(X) + ε) + 1⌋⁻¹`, applied
/// elementwise with the maximum taken over this matrix. Outputs lie in
/// `[1/61, 1]`, and equal 1 exactly where `x = 0`.
pub fn phi(distances: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("phi epsilon must be positive, got {epsilon}")));
    }
    if let Some(bad) = distances.iter().find(|d| !(**d >= 0.0)) {
        return Err(Error::InvalidInput(format!("phi: negative or NaN distance {bad}")));
    }
    let max = distances.iter().copied().fold(0.0, f64::max);
    let scale = PHI_LEVELS / (max + epsilon);
    Ok(distances
        .iter()
        .map(|&x| 1.0 / (scale * x + 1.0).floor())
        .collect())
}

/// The three affinity matrices behind one consecutive-pair CC value.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityPair {
    pub current: Vec<f64>,
    pub next: Vec<f64>,
    pub cross: Vec<f64>,
}

#[inline]
fn ab_dist(x: &ChromaFrame, y: &ChromaFrame, i: usize) -> f64 {
    (x.a[i] - y.a[i]).hypot(x.b[i] - y.b[i])
}

pub fn affinities(
    gt_t: &ChromaFrame,
    gt_t1: &ChromaFrame,
    pred_t: &ChromaFrame,
    pred_t1: &ChromaFrame,
) -> Result<AffinityPair> {
    check_chroma_seqs(
        &[pred_t.clone(), pred_t1.clone()],
        &[gt_t.clone(), gt_t1.clone()],
        "color_consistency",
    )?;
    if !gt_t.same_dims(gt_t1) {
        return Err(Error::Dimension("color_consistency: consecutive frames differ in size".into()));
    }
    let n = gt_t.len();
    let err_t: Vec<f64> = (0..n).map(|i| ab_dist(gt_t, pred_t, i)).collect();
    let err_t1: Vec<f64> = (0..n).map(|i| ab_dist(gt_t1, pred_t1, i)).collect();
    let change: Vec<f64> = (0..n)
        .map(|i| (ab_dist(gt_t, gt_t1, i) - ab_dist(pred_t, pred_t1, i)).abs())
        .collect();
    Ok(AffinityPair {
        current: phi(&err_t, PHI_EPSILON)?,
        next: phi(&err_t1, PHI_EPSILON)?,
        cross: phi(&change, PHI_EPSILON)?,
    })
}

/// Color Consistency between frames `t` and `t + 1`, in `(0, 1]`.
pub fn color_consistency_pair(
    gt_t: &ChromaFrame,
    gt_t1: &ChromaFrame,
    pred_t: &ChromaFrame,
    pred_t1: &ChromaFrame,
) -> Result<f64> {
    let aff = affinities(gt_t, gt_t1, pred_t, pred_t1)?;
    let n = aff.current.len();
    let sum: f64 = (0..n)
        .map(|i| 0.5 * (aff.current[i] + aff.next[i]) * aff.cross[i])
        .sum();
    Ok(sum / n as f64)
}

/// Per consecutive pair Color Consistency values, `N - 1` of them.
pub fn color_consistency_pairs(gt: &[ChromaFrame], pred: &[ChromaFrame]) -> Result<Vec<f64>> {
    check_chroma_seqs(pred, gt, "color_consistency")?;
    if gt.len() < 2 {
        return Err(Error::TooShort(format!(
            "color consistency needs at least 2 frames, got {}",
            gt.len()
        )));
    }
    (0..gt.len() - 1)
        .map(|t| color_consistency_pair(&gt[t], &gt[t + 1], &pred[t], &pred[t + 1]))
        .collect()
}

/// Mean Color Consistency over all consecutive frame pairs.
pub fn color_consistency(gt: &[ChromaFrame], pred: &[ChromaFrame]) -> Result<f64> {
    let pairs = color_consistency_pairs(gt, pred)?;
    Ok(pairs.iter().sum::<f64>() / pairs.len() as f64)
}

/// Evaluation of a predicted sequence against ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub frame_count: usize,
    pub psnr: Vec<f64>,
    pub mean_psnr: f64,
    /// Fraction in `[0, 1]`.
    pub raw_accuracy: f64,
    /// `frame_count - 1` values, empty for a single frame.
    pub cc: Vec<f64>,
    /// Fraction in `(0, 1]`; `None` when fewer than two frames were given.
    pub mean_cc: Option<f64>,
}

impl MetricReport {
    pub fn raw_accuracy_percent(&self) -> f64 {
        self.raw_accuracy * 100.0
    }

    pub fn mean_cc_percent(&self) -> Option<f64> {
        self.mean_cc.map(|c| c * 100.0)
    }

    /// One table row: `PSNR (dB) | RA (%) | CC (%)`.
    pub fn summary_row(&self, label: &str) -> String {
        let cc = self
            .mean_cc_percent()
            .map_or_else(|| "n/a".to_string(), |c| format!("{c:.2}"));
        format!(
            "{label:<12} PSNR {:.2} dB | RA {:.2} % | CC {cc} %",
            self.mean_psnr,
            self.raw_accuracy_percent()
        )
    }

    /// `key=value` lines, one per field.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frame_count={}", self.frame_count);
        let _ = writeln!(s, "mean_psnr_db={}", self.mean_psnr);
        let _ = writeln!(s, "psnr_cap_db={PSNR_CAP_DB}");
        let _ = writeln!(s, "raw_accuracy={}", self.raw_accuracy);
        let _ = writeln!(s, "raw_accuracy_percent={}", self.raw_accuracy_percent());
        let _ = writeln!(s, "ra_theta_max={RA_THETA_MAX}");
        match self.mean_cc {
            Some(cc) => {
                let _ = writeln!(s, "mean_cc={cc}");
                let _ = writeln!(s, "mean_cc_percent={}", cc * 100.0);
            }
            None => {
                let _ = writeln!(s, "mean_cc=n/a");
                let _ = writeln!(s, "mean_cc_percent=n/a");
            }
        }
        s
    }

    pub fn write_report(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_key_values()).map_err(|e| Error::io(path, e))
    }

    /// Per-frame CSV: `frame,psnr_db,cc_to_next`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let to_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        let mut w = csv::Writer::from_path(path).map_err(to_err)?;
        w.write_record(["frame", "psnr_db", "cc_to_next"]).map_err(to_err)?;
        for (t, p) in self.psnr.iter().enumerate() {
            let cc = self.cc.get(t).map_or_else(String::new, |c| c.to_string());
            w.write_record([t.to_string(), p.to_string(), cc]).map_err(to_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Parses the output of [`MetricReport::to_key_values`] into ordered pairs.
pub fn parse_key_values(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|line| line.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Computes every metric for a predicted RGB sequence against ground truth.
pub fn evaluate(pred: &[RgbFrame], gt: &[RgbFrame]) -> Result<MetricReport> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!(
            "evaluate: {} predicted frames vs {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::TooShort("evaluate needs at least one frame".into()));
    }
    let psnrs = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| psnr(p, g))
        .collect::<Result<Vec<_>>>()?;
    let mean_psnr = psnrs.iter().sum::<f64>() / psnrs.len() as f64;

    let pred_ab: Vec<ChromaFrame> = pred.iter().map(|f| rgb_to_lab(f).chroma()).collect();
    let gt_ab: Vec<ChromaFrame> = gt.iter().map(|f| rgb_to_lab(f).chroma()).collect();
    let raw_accuracy = raw_accuracy(&pred_ab, &gt_ab, RA_THETA_MAX)?;
    let (cc, mean_cc) = if gt.len() >= 2 {
        let cc = color_consistency_pairs(&gt_ab, &pred_ab)?;
        let mean = cc.iter().sum::<f64>() / cc.len() as f64;
        (cc, Some(mean))
    } else {
        (Vec::new(), None)
    };
    Ok(MetricReport {
        frame_count: pred.len(),
        psnr: psnrs,
        mean_psnr,
        raw_accuracy,
        cc,
        mean_cc,
    })
}
