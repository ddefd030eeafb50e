//! Trainable building blocks with hand-written backward passes.
//!
//! Every `backward` accumulates into the parameters' `grad` buffers; callers
//! zero them between steps.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{gemm, ConvGeometry, Tensor};
use crate::error::{Error, Result};

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; batch-norm running statistics are updated.
    Train,
    /// Running statistics; read-only.
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    shape: Vec<usize>,
}

impl Param {
    pub fn constant(shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        Param {
            value: vec![v; n],
            grad: vec![0.0; n],
            shape,
        }
    }

    pub fn gaussian(shape: Vec<usize>, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        let n = shape.iter().product();
        Param {
            value: (0..n).map(|_| normal.sample(rng)).collect(),
            grad: vec![0.0; n],
            shape,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Visits named tensors (parameters and buffers) in a fixed order.
pub trait Visit {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Vec<f64>));
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>);
}

fn check_input(what: &str, x: &Tensor, channels: usize) -> Result<()> {
    if x.channels() != channels {
        return Err(Error::Shape(format!(
            "{what} expects {channels} input channels, got tensor {:?}",
            x.shape()
        )));
    }
    Ok(())
}

/// 3D convolution, weight `[out, in, kt, kh, kw]`, same padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub weight: Param,
    pub bias: Param,
}

impl Conv3d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        rng: &mut impl Rng,
    ) -> Self {
        let [kt, kh, kw] = kernel;
        Conv3d {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: Param::gaussian(vec![out_channels, in_channels, kt, kh, kw], rng),
            bias: Param::constant(vec![out_channels], 0.0),
        }
    }

    fn geometry(&self, x: &Tensor) -> ConvGeometry {
        ConvGeometry::same(self.in_channels, x.volume(), self.kernel, self.stride)
    }

    pub fn output_volume(&self, input: [usize; 3]) -> [usize; 3] {
        ConvGeometry::same(self.in_channels, input, self.kernel, self.stride).small
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_input("conv3d", x, self.in_channels)?;
        let g = self.geometry(x);
        let [ts, hs, ws] = g.small;
        let (k, p) = (g.col_rows(), g.col_cols());
        let mut y = Tensor::zeros([x.batch(), self.out_channels, ts, hs, ws]);
        let mut col = vec![0.0; k * p];
        for b in 0..x.batch() {
            let xb = x.item(b);
            let yb = y.item_mut(b);
            for t in 0..ts {
                g.im2col(xb, t, &mut col);
                gemm(
                    self.out_channels,
                    k,
                    p,
                    1.0,
                    &self.weight.value,
                    (k, 1),
                    &col,
                    (p, 1),
                    0.0,
                    &mut yb[t * p..],
                    (ts * p, 1),
                );
            }
            let plane = ts * p;
            for (o, chunk) in yb.chunks_exact_mut(plane).enumerate() {
                let bias = self.bias.value[o];
                chunk.iter_mut().for_each(|v| *v += bias);
            }
        }
        Ok(y)
    }

    /// Accumulates weight and bias gradients; returns the input gradient when
    /// `want_dx` is set.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor, want_dx: bool) -> Option<Tensor> {
        let g = self.geometry(x);
        let [ts, _, _] = g.small;
        let (k, p) = (g.col_rows(), g.col_cols());
        let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
        let mut col = vec![0.0; k * p];
        let mut dcol = vec![0.0; k * p];
        for b in 0..x.batch() {
            let xb = x.item(b);
            let dyb = dy.item(b);
            for t in 0..ts {
                g.im2col(xb, t, &mut col);
                // dW += dY_t · colᵀ
                gemm(
                    self.out_channels,
                    p,
                    k,
                    1.0,
                    &dyb[t * p..],
                    (ts * p, 1),
                    &col,
                    (1, p),
                    1.0,
                    &mut self.weight.grad,
                    (k, 1),
                );
                if let Some(dx) = dx.as_mut() {
                    // dcol = Wᵀ · dY_t
                    gemm(
                        k,
                        self.out_channels,
                        p,
                        1.0,
                        &self.weight.value,
                        (1, k),
                        &dyb[t * p..],
                        (ts * p, 1),
                        0.0,
                        &mut dcol,
                        (p, 1),
                    );
                    g.col2im_add(&dcol, t, dx.item_mut(b));
                }
            }
            for (o, chunk) in dyb.chunks_exact(ts * p).enumerate() {
                self.bias.grad[o] += chunk.iter().sum::<f64>();
            }
        }
        dx
    }
}

impl Visit for Conv3d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        f(format!("{prefix}.weight"), self.weight.shape(), &self.weight.value);
        f(format!("{prefix}.bias"), self.bias.shape(), &self.bias.value);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Vec<f64>)) {
        f(format!("{prefix}.weight"), &mut self.weight.value);
        f(format!("{prefix}.bias"), &mut self.bias.value);
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

/// Transposed 3D convolution, weight `[in, out, kt, kh, kw]`. The output
/// volume is the input volume times the stride, the exact inverse geometry
/// of a same-padded [`Conv3d`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose3d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub weight: Param,
    pub bias: Param,
}

impl ConvTranspose3d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        rng: &mut impl Rng,
    ) -> Self {
        let [kt, kh, kw] = kernel;
        ConvTranspose3d {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: Param::gaussian(vec![in_channels, out_channels, kt, kh, kw], rng),
            bias: Param::constant(vec![out_channels], 0.0),
        }
    }

    fn geometry(&self, x: &Tensor) -> ConvGeometry {
        let [t, h, w] = x.volume();
        let large = [t * self.stride[0], h * self.stride[1], w * self.stride[2]];
        ConvGeometry::same(self.out_channels, large, self.kernel, self.stride)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_input("conv_transpose3d", x, self.in_channels)?;
        let g = self.geometry(x);
        debug_assert_eq!(g.small, x.volume());
        let [ts, _, _] = g.small;
        let (k, p) = (g.col_rows(), g.col_cols());
        let [tl, hl, wl] = g.large;
        let mut y = Tensor::zeros([x.batch(), self.out_channels, tl, hl, wl]);
        let mut col = vec![0.0; k * p];
        for b in 0..x.batch() {
            let xb = x.item(b);
            for t in 0..ts {
                // col = Wᵀ · X_t
                gemm(
                    k,
                    self.in_channels,
                    p,
                    1.0,
                    &self.weight.value,
                    (1, k),
                    &xb[t * p..],
                    (ts * p, 1),
                    0.0,
                    &mut col,
                    (p, 1),
                );
                g.col2im_add(&col, t, y.item_mut(b));
            }
            let plane = tl * hl * wl;
            for (o, chunk) in y.item_mut(b).chunks_exact_mut(plane).enumerate() {
                let bias = self.bias.value[o];
                chunk.iter_mut().for_each(|v| *v += bias);
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor, want_dx: bool) -> Option<Tensor> {
        let g = self.geometry(x);
        let [ts, _, _] = g.small;
        let (k, p) = (g.col_rows(), g.col_cols());
        let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
        let mut dcol = vec![0.0; k * p];
        for b in 0..x.batch() {
            let xb = x.item(b);
            let dyb = dy.item(b);
            for t in 0..ts {
                g.im2col(dyb, t, &mut dcol);
                // dW += X_t · dcolᵀ
                gemm(
                    self.in_channels,
                    p,
                    k,
                    1.0,
                    &xb[t * p..],
                    (ts * p, 1),
                    &dcol,
                    (1, p),
                    1.0,
                    &mut self.weight.grad,
                    (k, 1),
                );
                if let Some(dx) = dx.as_mut() {
                    // dX_t = W · dcol
                    gemm(
                        self.in_channels,
                        k,
                        p,
                        1.0,
                        &self.weight.value,
                        (k, 1),
                        &dcol,
                        (p, 1),
                        0.0,
                        &mut dx.item_mut(b)[t * p..],
                        (ts * p, 1),
                    );
                }
            }
            let plane = g.large.iter().product::<usize>();
            for (o, chunk) in dyb.chunks_exact(plane).enumerate() {
                self.bias.grad[o] += chunk.iter().sum::<f64>();
            }
        }
        dx
    }
}

impl Visit for ConvTranspose3d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        f(format!("{prefix}.weight"), self.weight.shape(), &self.weight.value);
        f(format!("{prefix}.bias"), self.bias.shape(), &self.bias.value);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Vec<f64>)) {
        f(format!("{prefix}.weight"), &mut self.weight.value);
        f(format!("{prefix}.bias"), &mut self.bias.value);
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch normalization over `(batch, time, height, width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm3d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
}

impl BatchNorm3d {
    pub fn new(channels: usize) -> Self {
        BatchNorm3d {
            gamma: Param::constant(vec![channels], 1.0),
            beta: Param::constant(vec![channels], 0.0),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn plane(x: &Tensor) -> usize {
        x.volume().iter().product()
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        check_input("batch_norm", x, self.channels())?;
        let plane = Self::plane(x);
        let mut y = x.clone();
        for b in 0..x.batch() {
            for (c, chunk) in y.item_mut(b).chunks_exact_mut(plane).enumerate() {
                let scale = self.gamma.value[c] / (self.running_var[c] + BN_EPS).sqrt();
                let shift = self.beta.value[c] - self.running_mean[c] * scale;
                chunk.iter_mut().for_each(|v| *v = *v * scale + shift);
            }
        }
        Ok(y)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, BatchNormCache)> {
        check_input("batch_norm", x, self.channels())?;
        let plane = Self::plane(x);
        let channels = self.channels();
        let n = (x.batch() * plane) as f64;
        let mut mean = vec![0.0; channels];
        let mut var = vec![0.0; channels];
        for b in 0..x.batch() {
            for (c, chunk) in x.item(b).chunks_exact(plane).enumerate() {
                mean[c] += chunk.iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for b in 0..x.batch() {
            for (c, chunk) in x.item(b).chunks_exact(plane).enumerate() {
                var[c] += chunk.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

        let mut x_hat = x.clone();
        let mut y = x.clone();
        for b in 0..x.batch() {
            for (c, chunk) in x_hat.item_mut(b).chunks_exact_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v = (*v - mean[c]) * inv_std[c]);
            }
            let xh = x_hat.item(b);
            for (c, (out, src)) in y
                .item_mut(b)
                .chunks_exact_mut(plane)
                .zip(xh.chunks_exact(plane))
                .enumerate()
            {
                let (g, be) = (self.gamma.value[c], self.beta.value[c]);
                out.iter_mut().zip(src).for_each(|(o, &h)| *o = g * h + be);
            }
        }

        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for c in 0..channels {
            self.running_mean[c] = (1.0 - BN_MOMENTUM) * self.running_mean[c] + BN_MOMENTUM * mean[c];
            self.running_var[c] = (1.0 - BN_MOMENTUM) * self.running_var[c] + BN_MOMENTUM * var[c] * unbias;
        }
        Ok((y, BatchNormCache { x_hat, inv_std }))
    }

    pub fn backward(&mut self, cache: &BatchNormCache, dy: &Tensor) -> Tensor {
        let plane = Self::plane(dy);
        let channels = self.channels();
        let n = (dy.batch() * plane) as f64;
        let mut sum_dy = vec![0.0; channels];
        let mut sum_dy_xhat = vec![0.0; channels];
        for b in 0..dy.batch() {
            let xh = cache.x_hat.item(b);
            for (c, (d, h)) in dy.item(b).chunks_exact(plane).zip(xh.chunks_exact(plane)).enumerate() {
                sum_dy[c] += d.iter().sum::<f64>();
                sum_dy_xhat[c] += d.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        for c in 0..channels {
            self.beta.grad[c] += sum_dy[c];
            self.gamma.grad[c] += sum_dy_xhat[c];
        }
        let mut dx = dy.clone();
        for b in 0..dy.batch() {
            let xh = cache.x_hat.item(b).to_vec();
            for (c, (d, h)) in dx.item_mut(b).chunks_exact_mut(plane).zip(xh.chunks_exact(plane)).enumerate() {
                let k = self.gamma.value[c] * cache.inv_std[c] / n;
                let (s1, s2) = (sum_dy[c], sum_dy_xhat[c]);
                d.iter_mut().zip(h).for_each(|(v, &hv)| *v = k * (n * *v - s1 - hv * s2));
            }
        }
        dx
    }
}

impl Visit for BatchNorm3d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        let c = [self.channels()];
        f(format!("{prefix}.gamma"), &c, &self.gamma.value);
        f(format!("{prefix}.beta"), &c, &self.beta.value);
        f(format!("{prefix}.running_mean"), &c, &self.running_mean);
        f(format!("{prefix}.running_var"), &c, &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Vec<f64>)) {
        f(format!("{prefix}.gamma"), &mut self.gamma.value);
        f(format!("{prefix}.beta"), &mut self.beta.value);
        f(format!("{prefix}.running_mean"), &mut self.running_mean);
        f(format!("{prefix}.running_var"), &mut self.running_var);
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
    }
}

pub fn relu(x: &mut Tensor) {
    x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(y: &Tensor, dy: &mut Tensor) {
    for (d, &v) in dy.data_mut().iter_mut().zip(y.data()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Runs BN (per `mode`) then ReLU, returning the activation and the BN cache
/// when training.
pub(crate) fn bn_relu(bn: &mut BatchNorm3d, z: &Tensor, mode: Mode) -> Result<(Tensor, Option<BatchNormCache>)> {
    let (mut a, cache) = match mode {
        Mode::Train => {
            let (y, c) = bn.forward_train(z)?;
            (y, Some(c))
        }
        Mode::Eval => (bn.forward_eval(z)?, None),
    };
    relu(&mut a);
    Ok((a, cache))
}
