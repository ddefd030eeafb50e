//! Procedural test footage: flat-colored shapes drifting smoothly over a
//! tinted, textured background.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FrameSequence;
use crate::colorspace::{lab_pixel_to_rgb, RgbFrame};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub num_shapes: usize,
    pub palette_size: usize,
    /// Peak displacement of each shape from its rest position, in pixels.
    pub motion_amplitude: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 32,
            width: 32,
            frames: 200,
            num_shapes: 3,
            palette_size: 4,
            motion_amplitude: 6.0,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(Error::Config(format!(
                "synthetic frames must be at least 16x16, got {}x{}",
                self.width, self.height
            )));
        }
        if self.frames < 2 {
            return Err(Error::Config(format!("need at least 2 frames, got {}", self.frames)));
        }
        if self.palette_size == 0 {
            return Err(Error::Config("palette must hold at least one color".into()));
        }
        if !self.motion_amplitude.is_finite() || self.motion_amplitude < 0.0 {
            return Err(Error::Config(format!(
                "motion amplitude must be finite and non-negative, got {}",
                self.motion_amplitude
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Disc,
    Square,
    Diamond,
}

struct Shape {
    kind: Kind,
    radius: f64,
    rest: [f64; 2],
    freq: [f64; 2],
    phase: [f64; 2],
    color: [u8; 3],
}

impl Shape {
    fn center(&self, t: f64, amplitude: f64) -> [f64; 2] {
        [
            self.rest[0] + amplitude * (self.freq[0] * t + self.phase[0]).sin(),
            self.rest[1] + amplitude * (self.freq[1] * t + self.phase[1]).sin(),
        ]
    }

    fn covers(&self, c: [f64; 2], x: f64, y: f64) -> bool {
        let (dx, dy) = ((x - c[0]).abs(), (y - c[1]).abs());
        match self.kind {
            Kind::Disc => dx * dx + dy * dy <= self.radius * self.radius,
            Kind::Square => dx.max(dy) <= self.radius * 0.85,
            Kind::Diamond => dx + dy <= self.radius * 1.25,
        }
    }
}

/// Palette entries get evenly spaced lightness so luminance alone tells
/// shapes of different colors apart.
fn palette(size: usize, rng: &mut ChaCha8Rng) -> Vec<[u8; 3]> {
    (0..size)
        .map(|k| {
            let l = if size == 1 { 60.0 } else { 30.0 + 55.0 * k as f64 / (size - 1) as f64 };
            let hue = rng.random::<f64>() * TAU;
            let chroma = 35.0 + 25.0 * rng.random::<f64>();
            lab_pixel_to_rgb([l, chroma * hue.cos(), chroma * hue.sin()])
        })
        .collect()
}

/// Deterministic for a given config.
pub fn synth_generate(cfg: &SynthConfig) -> Result<FrameSequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let colors = palette(cfg.palette_size, &mut rng);

    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let tint_hue = rng.random::<f64>() * TAU;
    let tint = [12.0 * tint_hue.cos(), 12.0 * tint_hue.sin()];
    let waves = [
        3.0 + 3.0 * rng.random::<f64>(),
        3.0 + 3.0 * rng.random::<f64>(),
        rng.random::<f64>(),
        rng.random::<f64>(),
    ];
    let mut background = RgbFrame::filled(cfg.width, cfg.height, [0, 0, 0])?;
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let u = (TAU * (x as f64 / waves[0] + waves[2])).sin();
            let v = (TAU * (y as f64 / waves[1] + waves[3])).sin();
            background.set_pixel(x, y, lab_pixel_to_rgb([50.0 + 10.0 * u * v, tint[0], tint[1]]));
        }
    }

    let scale = w.min(h) / 32.0;
    let shapes: Vec<Shape> = (0..cfg.num_shapes)
        .map(|s| {
            let kind = match rng.random_range(0..3) {
                0 => Kind::Disc,
                1 => Kind::Square,
                _ => Kind::Diamond,
            };
            let radius = scale * (3.5 + 3.0 * rng.random::<f64>());
            Shape {
                kind,
                radius,
                rest: [
                    radius + (w - 2.0 * radius) * rng.random::<f64>(),
                    radius + (h - 2.0 * radius) * rng.random::<f64>(),
                ],
                freq: [
                    TAU / (25.0 + 35.0 * rng.random::<f64>()),
                    TAU / (25.0 + 35.0 * rng.random::<f64>()),
                ],
                phase: [TAU * rng.random::<f64>(), TAU * rng.random::<f64>()],
                color: colors[s % colors.len()],
            }
        })
        .collect();

    let frames = (0..cfg.frames)
        .map(|t| {
            let mut frame = background.clone();
            for shape in &shapes {
                let c = shape.center(t as f64, cfg.motion_amplitude);
                for y in 0..cfg.height {
                    for x in 0..cfg.width {
                        if shape.covers(c, x as f64 + 0.5, y as f64 + 0.5) {
                            frame.set_pixel(x, y, shape.color);
                        }
                    }
                }
            }
            frame
        })
        .collect();
    FrameSequence::new(frames, 10.0, format!("synth-{}", cfg.rng_seed))
}
