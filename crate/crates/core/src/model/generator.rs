//! The 3D encoder/decoder generator with U-Net skip connections.
//!
//! Encoder layer `i` is a strided [`Conv3d`] followed by batch norm and ReLU.
//! Decoder layer `j` is a [`ConvTranspose3d`] over the previous decoder
//! output concatenated with the mirrored encoder output; all but the last
//! are followed by batch norm and ReLU, the last by a scaled tanh producing
//! the two chrominance channels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{bn_relu, relu, relu_backward, BatchNorm3d, BatchNormCache, Conv3d, ConvTranspose3d, Mode, Param, Visit};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Generator outputs are `OUTPUT_SCALE · tanh(z)`, so they stay inside
/// `[-1 + 1e-7, 1 - 1e-7]` even where `tanh` rounds to ±1.
pub const OUTPUT_SCALE: f64 = 1.0 - 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Strided layers in each of the encoder and decoder stacks.
    pub depth: usize,
    pub base_filters: usize,
    pub max_filters: usize,
    pub spatial_kernel: usize,
    pub temporal_kernel: usize,
    pub spatial_stride: usize,
    pub temporal_stride: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            depth: 8,
            base_filters: 64,
            max_filters: 512,
            spatial_kernel: 4,
            temporal_kernel: 3,
            spatial_stride: 2,
            temporal_stride: 1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("generator depth must be at least 1".into()));
        }
        if self.base_filters == 0 || self.max_filters < self.base_filters {
            return Err(Error::Config(format!(
                "generator filters must satisfy 1 <= base ({}) <= max ({})",
                self.base_filters, self.max_filters
            )));
        }
        if self.spatial_kernel == 0 || self.temporal_kernel == 0 || self.spatial_stride == 0 {
            return Err(Error::Config("generator kernels and strides must be positive".into()));
        }
        if self.temporal_stride != 1 {
            return Err(Error::Config(format!(
                "generator temporal stride must be 1 so output frames align with input frames, got {}",
                self.temporal_stride
            )));
        }
        Ok(())
    }

    /// Output channels of encoder layer `i`.
    pub fn encoder_width(&self, i: usize) -> usize {
        let scaled = self.base_filters.saturating_mul(1usize.checked_shl(i as u32).unwrap_or(usize::MAX));
        scaled.min(self.max_filters)
    }

    /// Spatial multiple inputs are padded up to: `spatial_stride ^ depth`.
    pub fn spatial_multiple(&self) -> usize {
        self.spatial_stride.pow(self.depth as u32)
    }

    fn kernel(&self) -> [usize; 3] {
        [self.temporal_kernel, self.spatial_kernel, self.spatial_kernel]
    }

    fn stride(&self) -> [usize; 3] {
        [self.temporal_stride, self.spatial_stride, self.spatial_stride]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBlock {
    pub conv: Conv3d,
    pub bn: BatchNorm3d,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderBlock {
    pub deconv: ConvTranspose3d,
    /// `None` on the output layer.
    pub bn: Option<BatchNorm3d>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    config: GeneratorConfig,
    pub encoder: Vec<EncoderBlock>,
    pub decoder: Vec<DecoderBlock>,
}

struct EncoderTape {
    input: Tensor,
    bn: BatchNormCache,
    output: Tensor,
}

struct DecoderTape {
    input: Tensor,
    bn: Option<BatchNormCache>,
    output: Tensor,
}

/// Intermediate values recorded by [`Generator::forward_train`].
pub struct GeneratorTape {
    encoder: Vec<EncoderTape>,
    decoder: Vec<DecoderTape>,
    padded: [usize; 2],
    offset: [usize; 2],
    cropped: [usize; 2],
}

impl Generator {
    pub fn new(config: GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (kernel, stride) = (config.kernel(), config.stride());
        let d = config.depth;
        let encoder = (0..d)
            .map(|i| {
                let cin = if i == 0 { 1 } else { config.encoder_width(i - 1) };
                let cout = config.encoder_width(i);
                EncoderBlock {
                    conv: Conv3d::new(cin, cout, kernel, stride, rng),
                    bn: BatchNorm3d::new(cout),
                }
            })
            .collect();
        let decoder = (0..d)
            .map(|j| {
                let cin = if j == 0 {
                    config.encoder_width(d - 1)
                } else {
                    2 * config.encoder_width(d - 1 - j)
                };
                let last = j == d - 1;
                let cout = if last { 2 } else { config.encoder_width(d - 2 - j) };
                DecoderBlock {
                    deconv: ConvTranspose3d::new(cin, cout, kernel, stride, rng),
                    bn: (!last).then(|| BatchNorm3d::new(cout)),
                }
            })
            .collect();
        Ok(Generator {
            config,
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let [b, c, t, h, w] = x.shape();
        if c != 1 || b == 0 || t == 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "generator expects [batch, 1, frames, height, width] luminance, got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    fn padded_size(&self, x: &Tensor) -> [usize; 2] {
        let m = self.config.spatial_multiple();
        let [_, _, _, h, w] = x.shape();
        [h.div_ceil(m) * m, w.div_ceil(m) * m]
    }

    fn run_train(&mut self, x: &Tensor, tape: &mut GeneratorTape) -> Result<Tensor> {
        self.check_input(x)?;
        let [_, _, _, h, w] = x.shape();
        let [ph, pw] = self.padded_size(x);
        let (mut act, offset) = if [ph, pw] == [h, w] {
            (x.clone(), [0, 0])
        } else {
            x.reflect_pad_hw(ph, pw)
        };
        tape.padded = [ph, pw];
        tape.offset = offset;
        tape.cropped = [h, w];

        let mut skips = Vec::with_capacity(self.encoder.len());
        for blk in &mut self.encoder {
            let z = blk.conv.forward(&act)?;
            let (a, cache) = bn_relu(&mut blk.bn, &z, Mode::Train)?;
            tape.encoder.push(EncoderTape {
                input: act,
                bn: cache.expect("train mode records batch-norm cache"),
                output: a.clone(),
            });
            skips.push(a.clone());
            act = a;
        }

        let d = self.decoder.len();
        for (j, blk) in self.decoder.iter_mut().enumerate() {
            let input = if j == 0 {
                act
            } else {
                Tensor::concat_channels(&act, &skips[d - 1 - j])?
            };
            let z = blk.deconv.forward(&input)?;
            let (out, cache) = match blk.bn.as_mut() {
                Some(bn) => bn_relu(bn, &z, Mode::Train)?,
                None => (z.map(|v| OUTPUT_SCALE * v.tanh()), None),
            };
            tape.decoder.push(DecoderTape {
                input,
                bn: cache,
                output: out.clone(),
            });
            act = out;
        }

        if [ph, pw] == [h, w] {
            Ok(act)
        } else {
            Ok(act.crop_hw(offset[0], offset[1], h, w))
        }
    }

    /// Eval-mode forward: running batch-norm statistics, no state change.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let [_, _, _, h, w] = x.shape();
        let [ph, pw] = self.padded_size(x);
        let (mut act, offset) = if [ph, pw] == [h, w] {
            (x.clone(), [0, 0])
        } else {
            x.reflect_pad_hw(ph, pw)
        };
        let mut skips = Vec::with_capacity(self.encoder.len());
        for blk in &self.encoder {
            let mut a = blk.bn.forward_eval(&blk.conv.forward(&act)?)?;
            relu(&mut a);
            skips.push(a.clone());
            act = a;
        }
        let d = self.decoder.len();
        for (j, blk) in self.decoder.iter().enumerate() {
            let input = if j == 0 {
                act
            } else {
                Tensor::concat_channels(&act, &skips[d - 1 - j])?
            };
            let z = blk.deconv.forward(&input)?;
            act = match &blk.bn {
                Some(bn) => {
                    let mut a = bn.forward_eval(&z)?;
                    relu(&mut a);
                    a
                }
                None => z.map(|v| OUTPUT_SCALE * v.tanh()),
            };
        }
        if [ph, pw] == [h, w] {
            Ok(act)
        } else {
            Ok(act.crop_hw(offset[0], offset[1], h, w))
        }
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, GeneratorTape)> {
        let mut tape = GeneratorTape {
            encoder: Vec::new(),
            decoder: Vec::new(),
            padded: [0, 0],
            offset: [0, 0],
            cropped: [0, 0],
        };
        let y = self.run_train(x, &mut tape)?;
        Ok((y, tape))
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Train => self.forward_train(x).map(|(y, _)| y),
            Mode::Eval => self.forward_eval(x),
        }
    }

    /// Accumulates parameter gradients given `dout`, the loss gradient with
    /// respect to the (cropped) generator output.
    pub fn backward(&mut self, tape: &GeneratorTape, dout: &Tensor) {
        let d = self.decoder.len();
        let mut grad = if tape.padded == tape.cropped {
            dout.clone()
        } else {
            dout.uncrop_hw(tape.offset[0], tape.offset[1], tape.padded[0], tape.padded[1])
        };
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; d];

        for j in (0..d).rev() {
            let blk = &mut self.decoder[j];
            let t = &tape.decoder[j];
            let dz = match (blk.bn.as_mut(), t.bn.as_ref()) {
                (Some(bn), Some(cache)) => {
                    relu_backward(&t.output, &mut grad);
                    bn.backward(cache, &grad)
                }
                _ => {
                    let mut g = grad.clone();
                    for (gv, &y) in g.data_mut().iter_mut().zip(t.output.data()) {
                        let th = y / OUTPUT_SCALE;
                        *gv *= OUTPUT_SCALE * (1.0 - th * th);
                    }
                    g
                }
            };
            let dinput = blk
                .deconv
                .backward(&t.input, &dz, true)
                .expect("input gradient requested");
            if j == 0 {
                accumulate(&mut skip_grads[d - 1], dinput);
                // `grad` is unused past the innermost decoder layer.
                grad = Tensor::zeros([0, 0, 0, 0, 0]);
            } else {
                let prev_channels = t.input.channels() / 2;
                let (dprev, dskip) = dinput.split_channels(prev_channels);
                accumulate(&mut skip_grads[d - 1 - j], dskip);
                grad = dprev;
            }
        }

        for i in (0..d).rev() {
            let mut g = skip_grads[i].take().expect("every encoder output receives a gradient");
            let t = &tape.encoder[i];
            let blk = &mut self.encoder[i];
            relu_backward(&t.output, &mut g);
            let dz = blk.bn.backward(&t.bn, &g);
            if let Some(dx) = blk.conv.backward(&t.input, &dz, i > 0) {
                accumulate(&mut skip_grads[i - 1], dx);
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        self.params_into(&mut out);
        out
    }

    fn params_into<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        for blk in &mut self.encoder {
            blk.conv.params_mut(out);
            blk.bn.params_mut(out);
        }
        for blk in &mut self.decoder {
            blk.deconv.params_mut(out);
            if let Some(bn) = blk.bn.as_mut() {
                bn.params_mut(out);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        let enc: usize = self
            .encoder
            .iter()
            .map(|b| b.conv.weight.len() + b.conv.bias.len() + b.bn.gamma.len() + b.bn.beta.len())
            .sum();
        let dec: usize = self
            .decoder
            .iter()
            .map(|b| {
                b.deconv.weight.len()
                    + b.deconv.bias.len()
                    + b.bn.as_ref().map_or(0, |bn| bn.gamma.len() + bn.beta.len())
            })
            .sum();
        enc + dec
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl Visit for Generator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        for (i, blk) in self.encoder.iter().enumerate() {
            blk.conv.visit(&format!("{prefix}.enc{i}.conv"), f);
            blk.bn.visit(&format!("{prefix}.enc{i}.bn"), f);
        }
        for (j, blk) in self.decoder.iter().enumerate() {
            blk.deconv.visit(&format!("{prefix}.dec{j}.deconv"), f);
            if let Some(bn) = &blk.bn {
                bn.visit(&format!("{prefix}.dec{j}.bn"), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Vec<f64>)) {
        for (i, blk) in self.encoder.iter_mut().enumerate() {
            blk.conv.visit_mut(&format!("{prefix}.enc{i}.conv"), f);
            blk.bn.visit_mut(&format!("{prefix}.enc{i}.bn"), f);
        }
        for (j, blk) in self.decoder.iter_mut().enumerate() {
            blk.deconv.visit_mut(&format!("{prefix}.dec{j}.deconv"), f);
            if let Some(bn) = blk.bn.as_mut() {
                bn.visit_mut(&format!("{prefix}.dec{j}.bn"), f);
            }
        }
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.params_into(out);
    }
}
