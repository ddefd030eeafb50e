//! The conditional GAN: a 3D U-Net generator mapping luminance clips to
//! chrominance clips, and a 3D convolutional discriminator scoring
//! chrominance clips as real or generated.

mod checkpoint;
mod discriminator;
mod generator;
pub mod layers;
pub mod tensor;

pub use checkpoint::{checkpoint_id, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use discriminator::{Discriminator, DiscriminatorConfig, DiscriminatorTape, PROB_EPS};
pub use generator::{DecoderBlock, EncoderBlock, Generator, GeneratorConfig, GeneratorTape, OUTPUT_SCALE};
pub use layers::{Mode, Param, Visit};
pub use tensor::Tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::colorspace::NormalizedClip;
use crate::error::{Error, Result};

/// All model state: both networks (weights and batch-norm running
/// statistics), the optimizer step counter and the initialization seed.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub step: u64,
    pub seed: u64,
}

/// Deterministic initialization: weights `~ N(0, 0.02²)`, biases 0, batch
/// norm scale 1 and shift 0.
pub fn init_params(gcfg: GeneratorConfig, dcfg: DiscriminatorConfig, seed: u64) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let generator = Generator::new(gcfg, &mut rng)?;
    let discriminator = Discriminator::new(dcfg, &mut rng)?;
    Ok(ModelParams {
        generator,
        discriminator,
        step: 0,
        seed,
    })
}

impl ModelParams {
    /// Every named tensor, parameters and buffers, in a stable order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        let mut push = |name: String, shape: &[usize], v: &[f64]| out.push((name, shape.to_vec(), v.to_vec()));
        self.generator.visit("generator", &mut push);
        self.discriminator.visit("discriminator", &mut push);
        out
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        let mut check = |_: String, _: &[usize], v: &[f64]| ok &= v.iter().all(|x| x.is_finite());
        self.generator.visit("generator", &mut check);
        self.discriminator.visit("discriminator", &mut check);
        ok
    }
}

fn luminance_tensor(x: &NormalizedClip) -> Result<Tensor> {
    if x.channels() != 1 {
        return Err(Error::Shape(format!(
            "generator input must be a 1-channel luminance clip, got {} channels",
            x.channels()
        )));
    }
    Tensor::from_clips([x])
}

/// Maps a luminance clip `(H, W, C, 1)` to a chrominance clip `(H, W, C, 2)`.
pub fn generator_forward(x: &NormalizedClip, params: &mut ModelParams, mode: Mode) -> Result<NormalizedClip> {
    let out = params.generator.forward(&luminance_tensor(x)?, mode)?;
    Ok(out.clip(0))
}

/// Scores a batch of chrominance clips; one probability in `(0, 1)` per clip.
///
/// `luminance` must be given when the discriminator is configured to
/// condition on it, and is ignored otherwise.
pub fn discriminator_forward(
    y: &[NormalizedClip],
    luminance: Option<&[NormalizedClip]>,
    params: &mut ModelParams,
    mode: Mode,
) -> Result<Vec<f64>> {
    if y.iter().any(|c| c.channels() != 2) {
        return Err(Error::Shape("discriminator input must be 2-channel chrominance clips".into()));
    }
    let chroma = Tensor::from_clips(y)?;
    let input = discriminator_input(&params.discriminator, &chroma, luminance.map(Tensor::from_clips).transpose()?.as_ref())?;
    params.discriminator.forward(&input, mode)
}

/// Builds the discriminator input, prepending luminance when conditioned.
pub fn discriminator_input(d: &Discriminator, chroma: &Tensor, luminance: Option<&Tensor>) -> Result<Tensor> {
    if d.config().condition_on_luminance {
        let x = luminance.ok_or_else(|| {
            Error::InvalidInput("luminance-conditioned discriminator needs the luminance clip".into())
        })?;
        Tensor::concat_channels(x, chroma)
    } else {
        Ok(chroma.clone())
    }
}
