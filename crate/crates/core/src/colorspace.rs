//! sRGB ⇄ CIE Lab conversion and the affine maps between Lab channels and
//! the network's `[-1, 1]` working range.
//!
//! Conversions go through linear sRGB and CIE XYZ under the D65 white point
//! with the standard piecewise cube-root companding. Chrominance is clamped
//! to `[-128, 127]`, the signed 8-bit Lab gamut.

use std::sync::LazyLock;

use crate::error::{Error, Result};

pub const L_MIN: f64 = 0.0;
pub const L_MAX: f64 = 100.0;
pub const AB_MIN: f64 = -128.0;
pub const AB_MAX: f64 = 127.0;

/// D65 reference white, 2° observer.
const WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

const CIE_EPSILON: f64 = 216.0 / 24389.0;
const CIE_KAPPA: f64 = 24389.0 / 27.0;

/// Linear sRGB → XYZ (IEC 61966-2-1).
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

static XYZ_TO_RGB: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| invert3(&RGB_TO_XYZ));

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let [[a, b, c], [d, e, f], [g, h, i]] = *m;
    let det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g);
    [
        [(e * i - f * h) / det, (c * h - b * i) / det, (b * f - c * e) / det],
        [(f * g - d * i) / det, (a * i - c * g) / det, (c * d - a * f) / det],
        [(d * h - e * g) / det, (b * g - a * h) / det, (a * e - b * d) / det],
    ]
}

fn mul3(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

#[inline]
fn srgb_to_linear(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn linear_to_srgb(c: f64) -> f64 {
    let c = c.clamp(0.0, 1.0);
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > CIE_EPSILON {
        t.cbrt()
    } else {
        (CIE_KAPPA * t + 16.0) / 116.0
    }
}

#[inline]
fn lab_f_inv(v: f64) -> f64 {
    let cube = v * v * v;
    if cube > CIE_EPSILON {
        cube
    } else {
        (116.0 * v - 16.0) / CIE_KAPPA
    }
}

/// Converts one sRGB pixel to `(L, a, b)`, clamped to the Lab value ranges.
pub fn rgb_pixel_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let linear = [
        srgb_to_linear(rgb[0]),
        srgb_to_linear(rgb[1]),
        srgb_to_linear(rgb[2]),
    ];
    let xyz = mul3(&RGB_TO_XYZ, linear);
    let fx = lab_f(xyz[0] / WHITE[0]);
    let fy = lab_f(xyz[1] / WHITE[1]);
    let fz = lab_f(xyz[2] / WHITE[2]);
    [
        (116.0 * fy - 16.0).clamp(L_MIN, L_MAX),
        (500.0 * (fx - fy)).clamp(AB_MIN, AB_MAX),
        (200.0 * (fy - fz)).clamp(AB_MIN, AB_MAX),
    ]
}

/// Converts one Lab pixel to sRGB. Out-of-gamut results are clamped per
/// channel.
pub fn lab_pixel_to_rgb(lab: [f64; 3]) -> [u8; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [
        lab_f_inv(fx) * WHITE[0],
        lab_f_inv(fy) * WHITE[1],
        lab_f_inv(fz) * WHITE[2],
    ];
    let linear = mul3(&XYZ_TO_RGB, xyz);
    linear.map(|c| (linear_to_srgb(c) * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// An 8-bit sRGB frame, interleaved `RGBRGB…` in row-major order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RgbFrame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbFrame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "frame must be at least 1x1, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Dimension(format!(
                "{width}x{height} RGB frame needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(RgbFrame {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        RgbFrame::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Mirror along the width axis.
    pub fn flipped_horizontally(&self) -> RgbFrame {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(self.width - 1 - x, y, self.pixel(x, y));
            }
        }
        out
    }

    pub fn same_dims(&self, other: &RgbFrame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// The two chrominance planes of a frame, in Lab units.
#[derive(Clone, Debug, PartialEq)]
pub struct ChromaFrame {
    pub width: usize,
    pub height: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl ChromaFrame {
    pub fn new(width: usize, height: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if a.len() != n || b.len() != n {
            return Err(Error::Dimension(format!(
                "{width}x{height} chroma frame needs {n} values per plane, got a={} b={}",
                a.len(),
                b.len()
            )));
        }
        Ok(ChromaFrame {
            width,
            height,
            a,
            b,
        })
    }

    /// `a = b = 0` everywhere: the luminance-only colorization.
    pub fn neutral(width: usize, height: usize) -> Self {
        let n = width * height;
        ChromaFrame {
            width,
            height,
            a: vec![0.0; n],
            b: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn same_dims(&self, other: &ChromaFrame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// A frame in CIE Lab: `L ∈ [0, 100]`, `a, b ∈ [-128, 127]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabFrame {
    pub width: usize,
    pub height: usize,
    pub l: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LabFrame {
    /// Builds a frame, clamping every channel into its valid range.
    pub fn new(width: usize, height: usize, l: Vec<f64>, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if width == 0 || height == 0 || l.len() != n || a.len() != n || b.len() != n {
            return Err(Error::Dimension(format!(
                "{width}x{height} Lab frame needs {n} values per channel, got L={} a={} b={}",
                l.len(),
                a.len(),
                b.len()
            )));
        }
        let clamp = |v: Vec<f64>, lo: f64, hi: f64| v.into_iter().map(|x| x.clamp(lo, hi)).collect();
        Ok(LabFrame {
            width,
            height,
            l: clamp(l, L_MIN, L_MAX),
            a: clamp(a, AB_MIN, AB_MAX),
            b: clamp(b, AB_MIN, AB_MAX),
        })
    }

    pub fn from_parts(l: Vec<f64>, chroma: ChromaFrame) -> Result<Self> {
        LabFrame::new(chroma.width, chroma.height, l, chroma.a, chroma.b)
    }

    pub fn chroma(&self) -> ChromaFrame {
        ChromaFrame {
            width: self.width,
            height: self.height,
            a: self.a.clone(),
            b: self.b.clone(),
        }
    }

    pub fn same_dims(&self, other: &LabFrame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

pub fn rgb_to_lab(frame: &RgbFrame) -> LabFrame {
    let n = frame.width * frame.height;
    let mut l = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for px in frame.pixels() {
        let [pl, pa, pb] = rgb_pixel_to_lab(px);
        l.push(pl);
        a.push(pa);
        b.push(pb);
    }
    LabFrame {
        width: frame.width,
        height: frame.height,
        l,
        a,
        b,
    }
}

pub fn lab_to_rgb(frame: &LabFrame) -> RgbFrame {
    let mut data = Vec::with_capacity(frame.l.len() * 3);
    for i in 0..frame.l.len() {
        data.extend_from_slice(&lab_pixel_to_rgb([frame.l[i], frame.a[i], frame.b[i]]));
    }
    RgbFrame {
        width: frame.width,
        height: frame.height,
        data,
    }
}

#[inline]
pub fn normalize_l(l: f64) -> f64 {
    (l - L_MIN) / (L_MAX - L_MIN) * 2.0 - 1.0
}

#[inline]
pub fn denormalize_l(v: f64) -> f64 {
    (v.clamp(-1.0, 1.0) + 1.0) / 2.0 * (L_MAX - L_MIN) + L_MIN
}

#[inline]
pub fn normalize_ab(v: f64) -> f64 {
    (v - AB_MIN) / (AB_MAX - AB_MIN) * 2.0 - 1.0
}

/// Inverse of [`normalize_ab`]; inputs outside `[-1, 1]` are clamped first.
#[inline]
pub fn denormalize_ab_value(v: f64) -> f64 {
    (v.clamp(-1.0, 1.0) + 1.0) / 2.0 * (AB_MAX - AB_MIN) + AB_MIN
}

/// A clip of `frames` consecutive frames with `channels` planes each, values
/// in `[-1, 1]`. Stored channel-major: `data[((k * frames + t) * height + y) * width + x]`.
///
/// `channels == 1` holds luminance (`x`), `channels == 2` holds chrominance (`y`).
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedClip {
    channels: usize,
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl NormalizedClip {
    pub fn new(channels: usize, frames: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if !(1..=2).contains(&channels) {
            return Err(Error::Shape(format!("clip must have 1 or 2 channels, got {channels}")));
        }
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "clip dimensions must be positive, got C={frames} H={height} W={width}"
            )));
        }
        if data.len() != channels * frames * height * width {
            return Err(Error::Shape(format!(
                "clip {channels}x{frames}x{height}x{width} needs {} values, got {}",
                channels * frames * height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("clip value {v} outside [-1, 1]")));
        }
        Ok(NormalizedClip {
            channels,
            frames,
            height,
            width,
            data,
        })
    }

    pub(crate) fn from_raw(channels: usize, frames: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), channels * frames * height * width);
        NormalizedClip {
            channels,
            frames,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(H, W, C, K)`, the conventional clip shape.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.height, self.width, self.frames, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn index(&self, y: usize, x: usize, t: usize, k: usize) -> usize {
        ((k * self.frames + t) * self.height + y) * self.width + x
    }

    pub fn get(&self, y: usize, x: usize, t: usize, k: usize) -> f64 {
        self.data[self.index(y, x, t, k)]
    }

    /// Mirror every plane along the width axis.
    pub fn flipped_horizontally(&self) -> NormalizedClip {
        let mut out = self.clone();
        for row in 0..self.channels * self.frames * self.height {
            let base = row * self.width;
            out.data[base..base + self.width].reverse();
        }
        out
    }
}

/// Splits a run of Lab frames into the network input (normalized `L`) and
/// target (normalized `a`, `b`).
pub fn normalize(frames: &[LabFrame]) -> Result<(NormalizedClip, NormalizedClip)> {
    let first = frames
        .first()
        .ok_or_else(|| Error::TooShort("normalize needs at least one frame".into()))?;
    if let Some(bad) = frames.iter().find(|f| !f.same_dims(first)) {
        return Err(Error::Dimension(format!(
            "frame {}x{} does not match {}x{}",
            bad.width, bad.height, first.width, first.height
        )));
    }
    let (c, h, w) = (frames.len(), first.height, first.width);
    let plane = h * w;
    let mut x = Vec::with_capacity(c * plane);
    let mut y = vec![0.0; 2 * c * plane];
    for (t, f) in frames.iter().enumerate() {
        x.extend(f.l.iter().map(|&v| normalize_l(v)));
        for (dst, &v) in y[t * plane..(t + 1) * plane].iter_mut().zip(&f.a) {
            *dst = normalize_ab(v);
        }
        for (dst, &v) in y[(c + t) * plane..(c + t + 1) * plane].iter_mut().zip(&f.b) {
            *dst = normalize_ab(v);
        }
    }
    Ok((
        NormalizedClip::from_raw(1, c, h, w, x),
        NormalizedClip::from_raw(2, c, h, w, y),
    ))
}

/// Normalizes only the luminance planes, for inference on monochrome input.
pub fn normalize_luminance(frames: &[LabFrame]) -> Result<NormalizedClip> {
    let first = frames
        .first()
        .ok_or_else(|| Error::TooShort("normalize needs at least one frame".into()))?;
    if frames.iter().any(|f| !f.same_dims(first)) {
        return Err(Error::Dimension("frames in a clip must share dimensions".into()));
    }
    let data = frames
        .iter()
        .flat_map(|f| f.l.iter().map(|&v| normalize_l(v)))
        .collect();
    Ok(NormalizedClip::from_raw(1, frames.len(), first.height, first.width, data))
}

/// Maps a 2-channel clip back to per-frame `a`, `b` planes.
pub fn denormalize_ab(ab: &NormalizedClip) -> Result<Vec<ChromaFrame>> {
    if ab.channels != 2 {
        return Err(Error::Shape(format!(
            "denormalize_ab expects a 2-channel clip, got {}",
            ab.channels
        )));
    }
    let plane = ab.height * ab.width;
    let c = ab.frames;
    Ok((0..c)
        .map(|t| {
            let a = ab.data[t * plane..(t + 1) * plane]
                .iter()
                .map(|&v| denormalize_ab_value(v))
                .collect();
            let b = ab.data[(c + t) * plane..(c + t + 1) * plane]
                .iter()
                .map(|&v| denormalize_ab_value(v))
                .collect();
            ChromaFrame {
                width: ab.width,
                height: ab.height,
                a,
                b,
            }
        })
        .collect())
}
