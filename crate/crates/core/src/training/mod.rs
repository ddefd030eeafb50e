//! Adversarial + L1 training of the generator/discriminator pair.

mod adam;
mod log;

pub use adam::{Adam, OptimizerState, ADAM_EPS};
pub use log::{parse_loss_log, LossRecord, LOSS_LOG};

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colorspace::NormalizedClip;
use crate::dataset::{augment, AugmentConfig, ClipSample};
use crate::error::{Error, Result};
use crate::model::{discriminator_input, load_checkpoint, save_checkpoint, Discriminator, ModelParams, Param, Tensor};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before
/// taking logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the L1 term in the generator objective.
    pub lambda_l1: f64,
    pub batch_size: usize,
    pub num_steps: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Drives batch selection.
    pub seed: u64,
    pub checkpoint_every: u64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_l1: 100.0,
            batch_size: 4,
            num_steps: 2000,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            seed: 0,
            checkpoint_every: 500,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !self.lambda_l1.is_finite() || self.lambda_l1 < 0.0 {
            return bad(format!("lambda must be finite and non-negative, got {}", self.lambda_l1));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("Adam betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint interval must be at least 1".into());
        }
        self.augment.validate()
    }
}

fn mean_abs_diff(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Mean absolute difference over every element of two chrominance clips.
pub fn l1_loss(pred: &NormalizedClip, target: &NormalizedClip) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "l1 operands differ in shape: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(mean_abs_diff(pred.data(), target.data()))
}

/// Batch mean of `-log D(real) - log(1 - D(fake))`, probabilities clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn discriminator_loss(p_real: &[f64], p_fake: &[f64]) -> f64 {
    let real: f64 = p_real.iter().map(|&p| -clamp_prob(p).ln()).sum::<f64>() / p_real.len() as f64;
    let fake: f64 = p_fake.iter().map(|&p| -(1.0 - clamp_prob(p)).ln()).sum::<f64>() / p_fake.len() as f64;
    real + fake
}

/// Non-saturating generator loss: batch mean of `-log D(fake)`.
pub fn generator_adv_loss(p_fake: &[f64]) -> f64 {
    p_fake.iter().map(|&p| -clamp_prob(p).ln()).sum::<f64>() / p_fake.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorLoss {
    pub adversarial: f64,
    pub l1: f64,
    pub total: f64,
}

/// Stacks the inputs and targets of a batch.
pub fn batch_tensors(batch: &[ClipSample]) -> Result<(Tensor, Tensor)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty training batch".into()));
    }
    Ok((
        Tensor::from_clips(batch.iter().map(|s| &s.x))?,
        Tensor::from_clips(batch.iter().map(|s| &s.y))?,
    ))
}

fn flat_grads(params: Vec<&mut Param>) -> Vec<f64> {
    params.into_iter().flat_map(|p| p.grad.iter().copied()).collect()
}

/// Runs the discriminator on real and generated clips (as separate batches),
/// accumulates its parameter gradients and returns its loss.
fn discriminator_pass(d: &mut Discriminator, x: &Tensor, y: &Tensor, fake: &Tensor, backward: bool) -> Result<f64> {
    let b = y.batch() as f64;
    let (p_real, tape) = d.forward_train(&discriminator_input(d, y, Some(x))?)?;
    if backward {
        let dp: Vec<f64> = p_real.iter().map(|&p| -1.0 / (b * clamp_prob(p))).collect();
        d.backward(&tape, &dp);
    }
    let (p_fake, tape) = d.forward_train(&discriminator_input(d, fake, Some(x))?)?;
    if backward {
        let dp: Vec<f64> = p_fake.iter().map(|&p| 1.0 / (b * (1.0 - clamp_prob(p)))).collect();
        d.backward(&tape, &dp);
    }
    Ok(discriminator_loss(&p_real, &p_fake))
}

/// Scores `fake` with the discriminator and returns the generator objective
/// together with its gradient with respect to `fake` (when requested).
fn generator_head(
    d: &mut Discriminator,
    x: &Tensor,
    y: &Tensor,
    fake: &Tensor,
    lambda: f64,
    backward: bool,
) -> Result<(GeneratorLoss, Option<Tensor>)> {
    let b = fake.batch() as f64;
    let (p, tape) = d.forward_train(&discriminator_input(d, fake, Some(x))?)?;
    let adversarial = generator_adv_loss(&p);
    let l1 = mean_abs_diff(fake.data(), y.data());
    let loss = GeneratorLoss {
        adversarial,
        l1,
        total: adversarial + lambda * l1,
    };
    if !backward {
        return Ok((loss, None));
    }
    let dp: Vec<f64> = p.iter().map(|&q| -1.0 / (b * clamp_prob(q))).collect();
    let din = d.backward(&tape, &dp);
    let mut dfake = if d.config().condition_on_luminance {
        din.split_channels(x.channels()).1
    } else {
        din
    };
    let scale = lambda / fake.data().len() as f64;
    for ((g, &f), &t) in dfake.data_mut().iter_mut().zip(fake.data()).zip(y.data()) {
        let diff = f - t;
        if diff != 0.0 {
            *g += scale * diff.signum();
        }
    }
    Ok((loss, Some(dfake)))
}

/// Generator objective on a batch, both networks in training mode. No
/// gradients are touched.
pub fn generator_objective(params: &mut ModelParams, batch: &[ClipSample], lambda: f64) -> Result<GeneratorLoss> {
    let (x, y) = batch_tensors(batch)?;
    let (fake, _) = params.generator.forward_train(&x)?;
    Ok(generator_head(&mut params.discriminator, &x, &y, &fake, lambda, false)?.0)
}

/// Generator objective and its gradient with respect to every generator
/// parameter, flattened in [`crate::model::Generator::params_mut`] order.
pub fn generator_gradients(
    params: &mut ModelParams,
    batch: &[ClipSample],
    lambda: f64,
) -> Result<(GeneratorLoss, Vec<f64>)> {
    let (x, y) = batch_tensors(batch)?;
    params.generator.zero_grad();
    let (fake, tape) = params.generator.forward_train(&x)?;
    let (loss, dfake) = generator_head(&mut params.discriminator, &x, &y, &fake, lambda, true)?;
    params.discriminator.zero_grad();
    params.generator.backward(&tape, &dfake.expect("gradient requested"));
    Ok((loss, flat_grads(params.generator.params_mut())))
}

/// Discriminator loss on a batch, both networks in training mode.
pub fn discriminator_objective(params: &mut ModelParams, batch: &[ClipSample]) -> Result<f64> {
    let (x, y) = batch_tensors(batch)?;
    let (fake, _) = params.generator.forward_train(&x)?;
    discriminator_pass(&mut params.discriminator, &x, &y, &fake, false)
}

/// Discriminator loss and its gradient with respect to every discriminator
/// parameter.
pub fn discriminator_gradients(params: &mut ModelParams, batch: &[ClipSample]) -> Result<(f64, Vec<f64>)> {
    let (x, y) = batch_tensors(batch)?;
    let (fake, _) = params.generator.forward_train(&x)?;
    params.discriminator.zero_grad();
    let loss = discriminator_pass(&mut params.discriminator, &x, &y, &fake, true)?;
    Ok((loss, flat_grads(params.discriminator.params_mut())))
}

/// One optimization step: a discriminator update on real and generated
/// clips, then a generator update against the freshly updated
/// discriminator. Increments `params.step`.
///
/// Hyperparameters are used as given; [`TrainConfig::validate`] is left to
/// the caller.
pub fn train_step(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    batch: &[ClipSample],
    cfg: &TrainConfig,
) -> Result<LossRecord> {
    let (x, y) = batch_tensors(batch)?;
    let mut record = LossRecord {
        step: params.step + 1,
        d_loss: f64::NAN,
        g_adv_loss: f64::NAN,
        l1_loss: f64::NAN,
        g_total: f64::NAN,
    };
    params.generator.zero_grad();
    params.discriminator.zero_grad();
    let (fake, tape) = params.generator.forward_train(&x)?;

    record.d_loss = discriminator_pass(&mut params.discriminator, &x, &y, &fake, true)?;
    if !record.d_loss.is_finite() {
        return Err(Error::Divergence(record));
    }
    opt.discriminator
        .step(params.discriminator.params_mut(), cfg.learning_rate, cfg.beta1, cfg.beta2);
    params.discriminator.zero_grad();

    let (loss, dfake) = generator_head(&mut params.discriminator, &x, &y, &fake, cfg.lambda_l1, true)?;
    params.discriminator.zero_grad();
    record.g_adv_loss = loss.adversarial;
    record.l1_loss = loss.l1;
    record.g_total = loss.total;
    if !record.is_finite() {
        return Err(Error::Divergence(record));
    }
    params.generator.backward(&tape, &dfake.expect("gradient requested"));
    opt.generator
        .step(params.generator.params_mut(), cfg.learning_rate, cfg.beta1, cfg.beta2);
    params.generator.zero_grad();
    params.step += 1;
    Ok(record)
}

pub fn checkpoint_file_name(step: u64) -> String {
    format!("ckpt_{step:06}.ckpt")
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn save_training_checkpoint(path: &Path, params: &ModelParams, opt: &OptimizerState) -> Result<()> {
    save_checkpoint(path, params, &opt.to_extras())
}

/// Loads model and optimizer state written by [`train`]. A checkpoint
/// without optimizer moments resumes with fresh ones.
pub fn resume(path: &Path) -> Result<(ModelParams, OptimizerState)> {
    let ckpt = load_checkpoint(path)?;
    let opt = OptimizerState::from_checkpoint(&ckpt).map_err(|reason| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    })?;
    Ok((ckpt.params, opt))
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub records: Vec<LossRecord>,
    pub final_checkpoint: PathBuf,
}

/// Runs `cfg.num_steps` steps from the given state, appending one line per
/// step to `losses.log` in `out_dir`, checkpointing every
/// `cfg.checkpoint_every` steps and writing `final.ckpt` at the end.
///
/// Batches and augmentation are drawn from generators keyed on the seeds and
/// the step counter, so a resumed run continues the same sequence.
pub fn train(
    samples: &[ClipSample],
    mut params: ModelParams,
    optimizer: Option<OptimizerState>,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidInput("no training samples".into()));
    }
    if cfg.batch_size > samples.len() {
        return Err(Error::Config(format!(
            "batch size {} exceeds the {} available training clips",
            cfg.batch_size,
            samples.len()
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join(LOSS_LOG);
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;

    let mut opt = optimizer.unwrap_or_default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut records = Vec::with_capacity(cfg.num_steps as usize);
    for _ in 0..cfg.num_steps {
        let mut pick = ChaCha8Rng::seed_from_u64(cfg.seed);
        pick.set_stream(params.step);
        let mut noise = ChaCha8Rng::seed_from_u64(cfg.augment.rng_seed);
        noise.set_stream(params.step);

        order.sort_unstable();
        let (chosen, _) = order.partial_shuffle(&mut pick, cfg.batch_size);
        let batch: Vec<ClipSample> = chosen
            .iter()
            .map(|&i| augment(&samples[i], &cfg.augment, &mut noise))
            .collect();

        let record = train_step(&mut params, &mut opt, &batch, cfg)?;
        writeln!(log, "{}", record.to_line()).map_err(|e| Error::io(&log_path, e))?;
        records.push(record);
        if params.step % cfg.checkpoint_every == 0 {
            save_training_checkpoint(&out_dir.join(checkpoint_file_name(params.step)), &params, &opt)?;
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT);
    save_training_checkpoint(&final_checkpoint, &params, &opt)?;
    Ok(TrainOutcome {
        params,
        optimizer: opt,
        records,
        final_checkpoint,
    })
}
