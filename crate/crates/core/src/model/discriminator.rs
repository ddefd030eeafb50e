//! The 3D convolutional discriminator: strided conv + batch norm + ReLU
//! layers, global average pooling, a dense unit and a sigmoid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{bn_relu, relu, relu_backward, BatchNorm3d, BatchNormCache, Conv3d, Mode, Param, Visit};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probabilities are squashed into `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub num_conv_layers: usize,
    pub base_filters: usize,
    pub max_filters: usize,
    pub spatial_kernel: usize,
    pub temporal_kernel: usize,
    pub spatial_stride: usize,
    pub temporal_stride: usize,
    /// Concatenate the luminance input to the chrominance clip. Off by
    /// default: the discriminator judges the chrominance sequence alone.
    pub condition_on_luminance: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            num_conv_layers: 5,
            base_filters: 64,
            max_filters: 512,
            spatial_kernel: 4,
            temporal_kernel: 3,
            spatial_stride: 2,
            temporal_stride: 1,
            condition_on_luminance: false,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_conv_layers == 0 {
            return Err(Error::Config("discriminator needs at least one conv layer".into()));
        }
        if self.base_filters == 0 || self.max_filters < self.base_filters {
            return Err(Error::Config(format!(
                "discriminator filters must satisfy 1 <= base ({}) <= max ({})",
                self.base_filters, self.max_filters
            )));
        }
        if [self.spatial_kernel, self.temporal_kernel, self.spatial_stride, self.temporal_stride].contains(&0) {
            return Err(Error::Config("discriminator kernels and strides must be positive".into()));
        }
        Ok(())
    }

    pub fn layer_width(&self, i: usize) -> usize {
        let scaled = self.base_filters.saturating_mul(1usize.checked_shl(i as u32).unwrap_or(usize::MAX));
        scaled.min(self.max_filters)
    }

    pub fn input_channels(&self) -> usize {
        if self.condition_on_luminance {
            3
        } else {
            2
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    pub convs: Vec<(Conv3d, BatchNorm3d)>,
    pub dense_weight: Param,
    pub dense_bias: Param,
}

struct LayerTape {
    input: Tensor,
    bn: BatchNormCache,
    output: Tensor,
}

pub struct DiscriminatorTape {
    layers: Vec<LayerTape>,
    pooled: Vec<f64>,
    logits: Vec<f64>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn probability(z: f64) -> f64 {
    PROB_EPS + (1.0 - 2.0 * PROB_EPS) * sigmoid(z)
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let kernel = [config.temporal_kernel, config.spatial_kernel, config.spatial_kernel];
        let stride = [config.temporal_stride, config.spatial_stride, config.spatial_stride];
        let convs = (0..config.num_conv_layers)
            .map(|i| {
                let cin = if i == 0 { config.input_channels() } else { config.layer_width(i - 1) };
                let cout = config.layer_width(i);
                (Conv3d::new(cin, cout, kernel, stride, rng), BatchNorm3d::new(cout))
            })
            .collect();
        let features = config.layer_width(config.num_conv_layers - 1);
        Ok(Discriminator {
            config,
            convs,
            dense_weight: Param::gaussian(vec![1, features], rng),
            dense_bias: Param::constant(vec![1], 0.0),
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    fn check_input(&self, y: &Tensor) -> Result<()> {
        if y.channels() != self.config.input_channels() || y.batch() == 0 {
            return Err(Error::Shape(format!(
                "discriminator expects [batch, {}, frames, height, width], got {:?}",
                self.config.input_channels(),
                y.shape()
            )));
        }
        Ok(())
    }

    /// Global average pool and dense unit: `(pooled features, logits)`.
    fn head(&self, act: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let features = act.channels();
        let plane: usize = act.volume().iter().product();
        let mut pooled = Vec::with_capacity(act.batch() * features);
        let mut logits = Vec::with_capacity(act.batch());
        for b in 0..act.batch() {
            let start = pooled.len();
            pooled.extend(act.item(b).chunks_exact(plane).map(|c| c.iter().sum::<f64>() / plane as f64));
            let z = self.dense_bias.value[0]
                + pooled[start..]
                    .iter()
                    .zip(&self.dense_weight.value)
                    .map(|(a, w)| a * w)
                    .sum::<f64>();
            logits.push(z);
        }
        (pooled, logits)
    }

    /// One probability per batch item, each in `(0, 1)`.
    pub fn forward_eval(&self, y: &Tensor) -> Result<Vec<f64>> {
        self.check_input(y)?;
        let mut act = y.clone();
        for (conv, bn) in &self.convs {
            act = bn.forward_eval(&conv.forward(&act)?)?;
            relu(&mut act);
        }
        Ok(self.head(&act).1.into_iter().map(probability).collect())
    }

    pub fn forward_train(&mut self, y: &Tensor) -> Result<(Vec<f64>, DiscriminatorTape)> {
        self.check_input(y)?;
        let mut act = y.clone();
        let mut layers = Vec::with_capacity(self.convs.len());
        for (conv, bn) in &mut self.convs {
            let z = conv.forward(&act)?;
            let (a, cache) = bn_relu(bn, &z, Mode::Train)?;
            layers.push(LayerTape {
                input: act,
                bn: cache.expect("train mode records batch-norm cache"),
                output: a.clone(),
            });
            act = a;
        }
        let (pooled, logits) = self.head(&act);
        let probs = logits.iter().map(|&z| probability(z)).collect();
        Ok((
            probs,
            DiscriminatorTape {
                layers,
                pooled,
                logits,
            },
        ))
    }

    pub fn forward(&mut self, y: &Tensor, mode: Mode) -> Result<Vec<f64>> {
        match mode {
            Mode::Train => self.forward_train(y).map(|(p, _)| p),
            Mode::Eval => self.forward_eval(y),
        }
    }

    /// Accumulates parameter gradients from `dprob` (loss gradient per batch
    /// item's probability) and returns the gradient with respect to the input.
    pub fn backward(&mut self, tape: &DiscriminatorTape, dprob: &[f64]) -> Tensor {
        let last = &tape.layers.last().expect("at least one layer").output;
        let features = last.channels();
        let plane: usize = last.volume().iter().product();
        let mut grad = Tensor::zeros(last.shape());
        for (b, (&z, &dp)) in tape.logits.iter().zip(dprob).enumerate() {
            let s = sigmoid(z);
            let dz = dp * (1.0 - 2.0 * PROB_EPS) * s * (1.0 - s);
            self.dense_bias.grad[0] += dz;
            let pooled = &tape.pooled[b * features..(b + 1) * features];
            for (f, &a) in pooled.iter().enumerate() {
                self.dense_weight.grad[f] += dz * a;
            }
            for (f, chunk) in grad.item_mut(b).chunks_exact_mut(plane).enumerate() {
                let g = dz * self.dense_weight.value[f] / plane as f64;
                chunk.fill(g);
            }
        }
        for (i, (conv, bn)) in self.convs.iter_mut().enumerate().rev() {
            let t = &tape.layers[i];
            relu_backward(&t.output, &mut grad);
            let dz = bn.backward(&t.bn, &grad);
            grad = conv.backward(&t.input, &dz, true).expect("input gradient requested");
        }
        grad
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        Visit::params_mut(self, &mut out);
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn param_count(&self) -> usize {
        let convs: usize = self
            .convs
            .iter()
            .map(|(c, bn)| c.weight.len() + c.bias.len() + bn.gamma.len() + bn.beta.len())
            .sum();
        convs + self.dense_weight.len() + self.dense_bias.len()
    }
}

impl Visit for Discriminator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        for (i, (conv, bn)) in self.convs.iter().enumerate() {
            conv.visit(&format!("{prefix}.conv{i}"), f);
            bn.visit(&format!("{prefix}.bn{i}"), f);
        }
        f(format!("{prefix}.dense.weight"), self.dense_weight.shape(), &self.dense_weight.value);
        f(format!("{prefix}.dense.bias"), self.dense_bias.shape(), &self.dense_bias.value);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Vec<f64>)) {
        for (i, (conv, bn)) in self.convs.iter_mut().enumerate() {
            conv.visit_mut(&format!("{prefix}.conv{i}"), f);
            bn.visit_mut(&format!("{prefix}.bn{i}"), f);
        }
        f(format!("{prefix}.dense.weight"), &mut self.dense_weight.value);
        f(format!("{prefix}.dense.bias"), &mut self.dense_bias.value);
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        for (conv, bn) in &mut self.convs {
            conv.params_mut(out);
            bn.params_mut(out);
        }
        out.push(&mut self.dense_weight);
        out.push(&mut self.dense_bias);
    }
}
