//! Dense 5-D tensors laid out `[batch, channels, time, height, width]`,
//! plus the im2col machinery shared by the strided and transposed 3D
//! convolutions.

use crate::colorspace::NormalizedClip;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 5],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 5]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "tensor of shape {shape:?} needs {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Stacks clips along the batch axis. All clips must share a shape.
    pub fn from_clips<'a>(clips: impl IntoIterator<Item = &'a NormalizedClip>) -> Result<Self> {
        let clips: Vec<&NormalizedClip> = clips.into_iter().collect();
        let first = clips
            .first()
            .ok_or_else(|| Error::Shape("cannot batch zero clips".into()))?;
        let shape = [
            clips.len(),
            first.channels(),
            first.frames(),
            first.height(),
            first.width(),
        ];
        let mut data = Vec::with_capacity(shape.iter().product());
        for c in &clips {
            if c.shape() != first.shape() {
                return Err(Error::Shape(format!(
                    "clip shape {:?} does not match batch shape {:?}",
                    c.shape(),
                    first.shape()
                )));
            }
            data.extend_from_slice(c.data());
        }
        Ok(Tensor { shape, data })
    }

    /// Extracts batch item `b` as a clip. Values are expected in `[-1, 1]`.
    pub fn clip(&self, b: usize) -> NormalizedClip {
        let [_, c, t, h, w] = self.shape;
        let n = c * t * h * w;
        NormalizedClip::from_raw(c, t, h, w, self.data[b * n..(b + 1) * n].to_vec())
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    /// `[time, height, width]`
    pub fn volume(&self) -> [usize; 3] {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Elements in one batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn item(&self, b: usize) -> &[f64] {
        let n = self.item_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.item_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let [ba, ca, ta, ha, wa] = a.shape;
        let [bb, cb, tb, hb, wb] = b.shape;
        if (ba, ta, ha, wa) != (bb, tb, hb, wb) {
            return Err(Error::Shape(format!(
                "cannot concatenate {:?} and {:?} along channels",
                a.shape, b.shape
            )));
        }
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        for i in 0..ba {
            data.extend_from_slice(a.item(i));
            data.extend_from_slice(b.item(i));
        }
        Ok(Tensor {
            shape: [ba, ca + cb, ta, ha, wa],
            data,
        })
    }

    /// Inverse of [`Tensor::concat_channels`]: the first `channels` channels and the rest.
    pub fn split_channels(&self, channels: usize) -> (Tensor, Tensor) {
        let [bs, c, t, h, w] = self.shape;
        let plane = t * h * w;
        let mut a = Vec::with_capacity(bs * channels * plane);
        let mut b = Vec::with_capacity(bs * (c - channels) * plane);
        for i in 0..bs {
            let item = self.item(i);
            a.extend_from_slice(&item[..channels * plane]);
            b.extend_from_slice(&item[channels * plane..]);
        }
        (
            Tensor {
                shape: [bs, channels, t, h, w],
                data: a,
            },
            Tensor {
                shape: [bs, c - channels, t, h, w],
                data: b,
            },
        )
    }

    /// Reflection-pads height and width up to `(height, width)`, splitting
    /// the padding evenly between both sides. Reflection repeats for pads
    /// larger than the source.
    pub fn reflect_pad_hw(&self, height: usize, width: usize) -> (Tensor, [usize; 2]) {
        let [bs, c, t, h, w] = self.shape;
        let (top, left) = ((height - h) / 2, (width - w) / 2);
        let mut out = Tensor::zeros([bs, c, t, height, width]);
        let rows: Vec<usize> = (0..height).map(|y| reflect_index(y as isize - top as isize, h)).collect();
        let cols: Vec<usize> = (0..width).map(|x| reflect_index(x as isize - left as isize, w)).collect();
        for plane in 0..bs * c * t {
            let src = &self.data[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out.data[plane * height * width..(plane + 1) * height * width];
            for (y, &sy) in rows.iter().enumerate() {
                for (x, &sx) in cols.iter().enumerate() {
                    dst[y * width + x] = src[sy * w + sx];
                }
            }
        }
        (out, [top, left])
    }

    /// Crops a `(height, width)` window at offset `(top, left)`.
    pub fn crop_hw(&self, top: usize, left: usize, height: usize, width: usize) -> Tensor {
        let [bs, c, t, h, w] = self.shape;
        let mut out = Tensor::zeros([bs, c, t, height, width]);
        for plane in 0..bs * c * t {
            for y in 0..height {
                let src = plane * h * w + (y + top) * w + left;
                let dst = plane * height * width + y * width;
                out.data[dst..dst + width].copy_from_slice(&self.data[src..src + width]);
            }
        }
        out
    }

    /// Gradient of [`Tensor::crop_hw`]: embeds into zeros of the uncropped size.
    pub fn uncrop_hw(&self, top: usize, left: usize, height: usize, width: usize) -> Tensor {
        let [bs, c, t, h, w] = self.shape;
        let mut out = Tensor::zeros([bs, c, t, height, width]);
        for plane in 0..bs * c * t {
            for y in 0..h {
                let dst = plane * height * width + (y + top) * width + left;
                let src = plane * h * w + y * w;
                out.data[dst..dst + w].copy_from_slice(&self.data[src..src + w]);
            }
        }
        out
    }
}

fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// `C = alpha·A·B + beta·C` on strided row-major views, `A: m×k`, `B: k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
    c_strides: (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let extent = |rows: usize, cols: usize, (rs, cs): (usize, usize)| (rows - 1) * rs + (cols - 1) * cs + 1;
    assert!(k == 0 || a.len() >= extent(m, k, a_strides), "gemm: A too small");
    assert!(k == 0 || b.len() >= extent(k, n, b_strides), "gemm: B too small");
    assert!(c.len() >= extent(m, n, c_strides), "gemm: C too small");
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            c_strides.0 as isize,
            c_strides.1 as isize,
        );
    }
}

/// Geometry of a 3D convolution between a "large" volume and the "small"
/// volume it strides down to, using TF-style same padding: the small extent
/// is `ceil(large / stride)` and padding is split with the extra on the high
/// side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub large: [usize; 3],
    pub small: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeometry {
    pub fn same(channels: usize, large: [usize; 3], kernel: [usize; 3], stride: [usize; 3]) -> Self {
        let mut small = [0; 3];
        let mut pad = [0; 3];
        for d in 0..3 {
            small[d] = large[d].div_ceil(stride[d]);
            let total = ((small[d] - 1) * stride[d] + kernel[d]).saturating_sub(large[d]);
            pad[d] = total / 2;
        }
        ConvGeometry {
            channels,
            large,
            small,
            kernel,
            stride,
            pad,
        }
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Rows of the column matrix.
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel_len()
    }

    /// Columns of the column matrix: one small-volume time slice.
    pub fn col_cols(&self) -> usize {
        self.small[1] * self.small[2]
    }

    #[cfg(test)]
    pub fn large_len(&self) -> usize {
        self.channels * self.large.iter().product::<usize>()
    }

    /// Source index along axis `d` for small position `o` and kernel tap `k`.
    #[inline]
    fn source(&self, d: usize, o: usize, k: usize) -> Option<usize> {
        let i = (o * self.stride[d] + k) as isize - self.pad[d] as isize;
        (i >= 0 && (i as usize) < self.large[d]).then_some(i as usize)
    }

    /// Gathers the receptive fields of small time slice `ts` into `col`
    /// (`col_rows × col_cols`, row-major).
    pub fn im2col(&self, large: &[f64], ts: usize, col: &mut [f64]) {
        let [kt, kh, kw] = self.kernel;
        let [_, lh, lw] = self.large;
        let [_, sh, sw] = self.small;
        let p = sh * sw;
        let mut row = 0;
        for c in 0..self.channels {
            for dt in 0..kt {
                let ti = self.source(0, ts, dt);
                for dh in 0..kh {
                    for dw in 0..kw {
                        let dst = &mut col[row * p..(row + 1) * p];
                        row += 1;
                        let Some(ti) = ti else {
                            dst.fill(0.0);
                            continue;
                        };
                        let base = (c * self.large[0] + ti) * lh * lw;
                        for ho in 0..sh {
                            let out = &mut dst[ho * sw..(ho + 1) * sw];
                            match self.source(1, ho, dh) {
                                None => out.fill(0.0),
                                Some(hi) => {
                                    let src = &large[base + hi * lw..base + (hi + 1) * lw];
                                    for (wo, o) in out.iter_mut().enumerate() {
                                        *o = match self.source(2, wo, dw) {
                                            Some(wi) => src[wi],
                                            None => 0.0,
                                        };
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `col` back onto the large volume; adjoint of [`Self::im2col`].
    pub fn col2im_add(&self, col: &[f64], ts: usize, large: &mut [f64]) {
        let [kt, kh, kw] = self.kernel;
        let [_, lh, lw] = self.large;
        let [_, sh, sw] = self.small;
        let p = sh * sw;
        let mut row = 0;
        for c in 0..self.channels {
            for dt in 0..kt {
                let ti = self.source(0, ts, dt);
                for dh in 0..kh {
                    for dw in 0..kw {
                        let src = &col[row * p..(row + 1) * p];
                        row += 1;
                        let Some(ti) = ti else { continue };
                        let base = (c * self.large[0] + ti) * lh * lw;
                        for ho in 0..sh {
                            let Some(hi) = self.source(1, ho, dh) else { continue };
                            let dst = &mut large[base + hi * lw..base + (hi + 1) * lw];
                            for wo in 0..sw {
                                if let Some(wi) = self.source(2, wo, dw) {
                                    dst[wi] += src[ho * sw + wo];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_geometry_halves_spatial_keeps_time() {
        let g = ConvGeometry::same(3, [3, 32, 32], [3, 4, 4], [1, 2, 2]);
        assert_eq!(g.small, [3, 16, 16]);
        assert_eq!(g.pad, [1, 1, 1]);
        let g = ConvGeometry::same(3, [1, 2, 2], [3, 4, 4], [1, 2, 2]);
        assert_eq!(g.small, [1, 1, 1]);
        assert_eq!(g.pad, [1, 1, 1]);
        let g = ConvGeometry::same(3, [1, 1, 1], [3, 4, 4], [1, 2, 2]);
        assert_eq!(g.small, [1, 1, 1]);
        assert_eq!(g.pad, [1, 1, 1]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for arbitrary x, c.
        let g = ConvGeometry::same(2, [3, 5, 6], [3, 4, 4], [1, 2, 2]);
        let x: Vec<f64> = (0..g.large_len()).map(|i| ((i * 37 % 101) as f64) / 50.0 - 1.0).collect();
        let n = g.col_rows() * g.col_cols();
        for ts in 0..g.small[0] {
            let c: Vec<f64> = (0..n).map(|i| ((i * 53 % 97) as f64) / 40.0 - 1.2).collect();
            let mut col = vec![0.0; n];
            g.im2col(&x, ts, &mut col);
            let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
            let mut back = vec![0.0; g.large_len()];
            g.col2im_add(&c, ts, &mut back);
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn reflect_pad_then_crop_is_identity() {
        let t = Tensor::from_vec([1, 2, 1, 3, 5], (0..30).map(|v| v as f64).collect()).unwrap();
        let (p, [top, left]) = t.reflect_pad_hw(8, 8);
        assert_eq!(p.shape(), [1, 2, 1, 8, 8]);
        assert_eq!(p.crop_hw(top, left, 3, 5), t);
        // mirror without repeating the edge sample
        assert_eq!(reflect_index(-1, 4), 1);
        assert_eq!(reflect_index(4, 4), 2);
        assert_eq!(reflect_index(9, 4), 3);
    }

    #[test]
    fn concat_split_roundtrip() {
        let a = Tensor::from_vec([2, 1, 1, 1, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::from_vec([2, 2, 1, 1, 2], vec![5., 6., 7., 8., 9., 10., 11., 12.]).unwrap();
        let c = Tensor::concat_channels(&a, &b).unwrap();
        assert_eq!(c.data(), &[1., 2., 5., 6., 7., 8., 3., 4., 9., 10., 11., 12.]);
        assert_eq!(c.split_channels(1), (a, b));
    }

    #[test]
    fn gemm_strided() {
        // A = [[1,2],[3,4]] stored column-major, B = I
        let a = [1.0, 3.0, 2.0, 4.0];
        let b = [1.0, 0.0, 0.0, 1.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, 1.0, &a, (1, 2), &b, (2, 1), 0.0, &mut c, (2, 1));
        assert_eq!(c, [1.0, 2.0, 3.0, 4.0]);
    }
}
