//! Frame sequences, train/test splitting, sliding-window training samples
//! and augmentation.

mod io;
mod synth;

pub use io::{frame_file_name, is_frame_file, load_frame_sequence, write_frame_sequence};
pub use synth::{synth_generate, SynthConfig};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::colorspace::{normalize, rgb_to_lab, LabFrame, NormalizedClip, RgbFrame};
use crate::error::{Error, Result};

/// An ordered run of equally sized RGB frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<RgbFrame>,
    /// Informational only.
    pub fps: f64,
    pub source_id: String,
}

impl FrameSequence {
    pub fn new(frames: Vec<RgbFrame>, fps: f64, source_id: impl Into<String>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::TooShort("a frame sequence needs at least one frame".into()))?;
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| !f.same_dims(first)) {
            return Err(Error::Dimension(format!(
                "frame {i} is {}x{}, expected {}x{}",
                f.width(),
                f.height(),
                first.width(),
                first.height()
            )));
        }
        Ok(FrameSequence {
            frames,
            fps,
            source_id: source_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn to_lab(&self) -> Vec<LabFrame> {
        self.frames.iter().map(rgb_to_lab).collect()
    }
}

/// Splits into the first `⌊train_fraction · N⌋` frames and the rest.
pub fn split_train_test(seq: &FrameSequence, train_fraction: f64) -> Result<(FrameSequence, FrameSequence)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    if seq.len() < 2 {
        return Err(Error::TooShort(format!(
            "splitting needs at least 2 frames, got {}",
            seq.len()
        )));
    }
    let cut = (train_fraction * seq.len() as f64).floor() as usize;
    if cut == 0 || cut == seq.len() {
        return Err(Error::TooShort(format!(
            "a {train_fraction} split of {} frames leaves one side empty",
            seq.len()
        )));
    }
    let part = |frames: &[RgbFrame], tag: &str| FrameSequence {
        frames: frames.to_vec(),
        fps: seq.fps,
        source_id: format!("{}#{tag}", seq.source_id),
    };
    Ok((part(&seq.frames[..cut], "train"), part(&seq.frames[cut..], "test")))
}

/// One training unit: `C` consecutive frames as normalized luminance input
/// and chrominance target.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipSample {
    pub x: NormalizedClip,
    pub y: NormalizedClip,
    pub start_index: usize,
}

/// All `N - C + 1` windows of `window` consecutive frames, advancing one frame
/// at a time.
pub fn windows(seq: &FrameSequence, window: usize) -> Result<Vec<ClipSample>> {
    windows_from_lab(&seq.to_lab(), window)
}

pub fn windows_from_lab(lab: &[LabFrame], window: usize) -> Result<Vec<ClipSample>> {
    if window == 0 {
        return Err(Error::Config("window length must be at least 1".into()));
    }
    if lab.len() < window {
        return Err(Error::TooShort(format!(
            "{} frames cannot fill a window of {window}",
            lab.len()
        )));
    }
    (0..=lab.len() - window)
        .map(|start| {
            let (x, y) = normalize(&lab[start..start + window])?;
            Ok(ClipSample {
                x,
                y,
                start_index: start,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_probability: f64,
    /// Variance of the additive noise on normalized luminance.
    pub noise_variance: f64,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_probability: 0.5,
            noise_variance: 1.2e-3,
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    /// No flips, no noise.
    pub fn disabled() -> Self {
        AugmentConfig {
            flip_probability: 0.0,
            noise_variance: 0.0,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::Config(format!(
                "flip probability must be in [0, 1], got {}",
                self.flip_probability
            )));
        }
        if !(self.noise_variance >= 0.0) || !self.noise_variance.is_finite() {
            return Err(Error::Config(format!(
                "noise variance must be finite and non-negative, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }
}

/// Randomly mirrors the whole clip (input and target together) along the
/// width axis, then adds zero-mean Gaussian noise to the luminance input only,
/// clamping it back into `[-1, 1]`.
pub fn augment(sample: &ClipSample, cfg: &AugmentConfig, rng: &mut impl Rng) -> ClipSample {
    let flip = cfg.flip_probability > 0.0 && rng.random::<f64>() < cfg.flip_probability;
    let mut out = if flip {
        ClipSample {
            x: sample.x.flipped_horizontally(),
            y: sample.y.flipped_horizontally(),
            start_index: sample.start_index,
        }
    } else {
        sample.clone()
    };
    if cfg.noise_variance > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_variance.sqrt()).expect("validated variance");
        for v in out.x.data_mut() {
            *v = (*v + normal.sample(rng)).clamp(-1.0, 1.0);
        }
    }
    out
}
