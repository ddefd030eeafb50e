//! Sliding-window colorization of whole sequences.
//!
//! Every window of `C` consecutive frames is run through the generator, so
//! each frame collects up to `C` chrominance estimates. These are combined
//! per pixel, either by averaging (uninformative prior) or by a MAP search
//! under a user-supplied prior on `(a, b)`.

use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use crate::colorspace::{denormalize_ab, lab_to_rgb, normalize_luminance, ChromaFrame, LabFrame, RgbFrame};
use crate::dataset::{load_frame_sequence, write_frame_sequence, FrameSequence};
use crate::error::{Error, Result};
use crate::model::{checkpoint_id, load_checkpoint, Generator, Tensor};

/// One window's chrominance for a single frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub window_start: usize,
    pub chroma: ChromaFrame,
}

/// Per-frame lists of estimates, in increasing window order.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateSet {
    pub window: usize,
    pub frames: Vec<Vec<Estimate>>,
}

impl EstimateSet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.frames.iter().map(Vec::len).collect()
    }
}

/// Number of windows of length `window` covering frame `t` of `n`.
pub fn expected_estimate_count(t: usize, n: usize, window: usize) -> usize {
    if window == 0 || window > n || t >= n {
        return 0;
    }
    (t + 1).min(window).min(n - t).min(n - window + 1)
}

/// Runs the generator (inference mode) on all `N - C + 1` windows.
pub fn sliding_window_estimates(lab: &[LabFrame], generator: &Generator, window: usize) -> Result<EstimateSet> {
    if window == 0 {
        return Err(Error::Config("window length must be at least 1".into()));
    }
    if lab.len() < window {
        return Err(Error::TooShort(format!(
            "{} frames cannot fill a window of {window}",
            lab.len()
        )));
    }
    let mut frames: Vec<Vec<Estimate>> = vec![Vec::new(); lab.len()];
    for start in 0..=lab.len() - window {
        let x = normalize_luminance(&lab[start..start + window])?;
        let out = generator.forward_eval(&Tensor::from_clips([&x])?)?;
        for (k, chroma) in denormalize_ab(&out.clip(0))?.into_iter().enumerate() {
            frames[start + k].push(Estimate {
                window_start: start,
                chroma,
            });
        }
    }
    Ok(EstimateSet { window, frames })
}

/// Log-density of a prior over `(a, b)`, up to an additive constant.
pub type LogDensity = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A prior on per-pixel chrominance with a Gaussian likelihood around each
/// estimate.
#[derive(Clone)]
pub struct CustomPrior {
    pub log_density: LogDensity,
    /// Standard deviation of the estimate likelihood, in Lab units.
    pub sigma: f64,
    /// Half-width of the square searched around the estimate mean.
    pub radius: f64,
    /// Grid spacing of the search.
    pub step: f64,
}

impl CustomPrior {
    pub fn new(log_density: impl Fn(f64, f64) -> f64 + Send + Sync + 'static, sigma: f64) -> Self {
        CustomPrior {
            log_density: Arc::new(log_density),
            sigma,
            radius: 16.0,
            step: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.sigma) || !ok(self.step) || !(self.radius.is_finite() && self.radius >= 0.0) {
            return Err(Error::Config(
                "custom prior needs positive sigma and step and a non-negative radius".into(),
            ));
        }
        Ok(())
    }
}

impl fmt::Debug for CustomPrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPrior")
            .field("sigma", &self.sigma)
            .field("radius", &self.radius)
            .field("step", &self.step)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug, Default)]
pub enum Prior {
    /// Per-pixel arithmetic mean of the estimates.
    #[default]
    Uninformative,
    Custom(CustomPrior),
}

impl Prior {
    pub fn tag(&self) -> &'static str {
        match self {
            Prior::Uninformative => "uninformative",
            Prior::Custom(_) => "custom",
        }
    }
}

/// Combines each frame's estimates into a single chrominance frame.
pub fn aggregate(estimates: &EstimateSet, prior: &Prior) -> Result<Vec<ChromaFrame>> {
    if let Prior::Custom(p) = prior {
        p.validate()?;
    }
    estimates
        .frames
        .iter()
        .enumerate()
        .map(|(t, list)| {
            let first = list
                .first()
                .ok_or_else(|| Error::Invariant(format!("frame {t} received no estimates")))?;
            if list.iter().any(|e| !e.chroma.same_dims(&first.chroma)) {
                return Err(Error::Dimension(format!("frame {t}: estimates differ in size")));
            }
            let (w, h) = (first.chroma.width, first.chroma.height);
            let n = list.len() as f64;
            let mut a = vec![0.0; w * h];
            let mut b = vec![0.0; w * h];
            for e in list {
                for i in 0..w * h {
                    a[i] += e.chroma.a[i];
                    b[i] += e.chroma.b[i];
                }
            }
            a.iter_mut().chain(b.iter_mut()).for_each(|v| *v /= n);
            if let Prior::Custom(p) = prior {
                for i in 0..w * h {
                    let samples: Vec<(f64, f64)> = list.iter().map(|e| (e.chroma.a[i], e.chroma.b[i])).collect();
                    (a[i], b[i]) = map_estimate(p, (a[i], b[i]), &samples);
                }
            }
            ChromaFrame::new(w, h, a, b)
        })
        .collect()
}

/// Grid search for the posterior mode around `center`; ties keep the first
/// candidate in scan order.
fn map_estimate(prior: &CustomPrior, center: (f64, f64), samples: &[(f64, f64)]) -> (f64, f64) {
    let k = (prior.radius / prior.step).floor() as i64;
    let inv = 1.0 / (2.0 * prior.sigma * prior.sigma);
    let mut best = (f64::NEG_INFINITY, center);
    for i in -k..=k {
        for j in -k..=k {
            let c = (center.0 + i as f64 * prior.step, center.1 + j as f64 * prior.step);
            let lik: f64 = samples
                .iter()
                .map(|&(a, b)| -((c.0 - a).powi(2) + (c.1 - b).powi(2)) * inv)
                .sum();
            let score = lik + (prior.log_density)(c.0, c.1);
            if score > best.0 {
                best = (score, c);
            }
        }
    }
    best.1
}

/// Pairs each lightness channel with its chrominance and converts to RGB.
pub fn recombine(lab: &[LabFrame], chroma: &[ChromaFrame]) -> Result<Vec<RgbFrame>> {
    if lab.len() != chroma.len() {
        return Err(Error::Dimension(format!(
            "{} lightness frames but {} chrominance frames",
            lab.len(),
            chroma.len()
        )));
    }
    lab.iter()
        .zip(chroma)
        .map(|(l, c)| Ok(lab_to_rgb(&LabFrame::from_parts(l.l.clone(), c.clone())?)))
        .collect()
}

/// Colorizes Lab frames (only lightness is read) in memory.
pub fn colorize_frames(lab: &[LabFrame], generator: &Generator, window: usize, prior: &Prior) -> Result<Vec<RgbFrame>> {
    let est = sliding_window_estimates(lab, generator, window)?;
    recombine(lab, &aggregate(&est, prior)?)
}

/// Keeps lightness and drops all chrominance.
pub fn grayscale_frames(lab: &[LabFrame]) -> Result<Vec<RgbFrame>> {
    let neutral: Vec<ChromaFrame> = lab.iter().map(|f| ChromaFrame::neutral(f.width, f.height)).collect();
    recombine(lab, &neutral)
}

pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Debug)]
pub struct ColorizeOptions {
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Required unless `baseline_grayscale` is set.
    pub checkpoint: Option<PathBuf>,
    pub window: usize,
    pub prior: Prior,
    pub baseline_grayscale: bool,
}

#[derive(Clone, Debug)]
pub struct ColorizeOutcome {
    pub frames: Vec<PathBuf>,
    pub manifest: PathBuf,
}

/// Reads a frame directory, colorizes it and writes numbered PNG frames plus
/// `manifest.txt` to the output directory.
pub fn colorize_video(opts: &ColorizeOptions) -> Result<ColorizeOutcome> {
    let seq = load_frame_sequence(&opts.input_dir)?;
    let lab = seq.to_lab();
    let (frames, id) = if opts.baseline_grayscale {
        (grayscale_frames(&lab)?, "none".to_string())
    } else {
        let path = opts
            .checkpoint
            .as_deref()
            .ok_or_else(|| Error::Config("a checkpoint is required unless the grayscale baseline is requested".into()))?;
        let ckpt = load_checkpoint(path)?;
        let frames = colorize_frames(&lab, &ckpt.params.generator, opts.window, &opts.prior)?;
        (frames, checkpoint_id(path)?)
    };
    let out = FrameSequence::new(frames, seq.fps, format!("{}#colorized", seq.source_id))?;
    let written = write_frame_sequence(&out, &opts.output_dir)?;
    let manifest = opts.output_dir.join(MANIFEST);
    let text = format!(
        "source={}\ncheckpoint_id={id}\nmode={}\nwindow={}\nframes={}\nprior={}\n",
        opts.input_dir.display(),
        if opts.baseline_grayscale { "grayscale" } else { "model" },
        opts.window,
        out.len(),
        opts.prior.tag(),
    );
    fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
    Ok(ColorizeOutcome {
        frames: written,
        manifest,
    })
}
