//! Command-line front end: `synth`, `train`, `colorize` and `evaluate`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dataset::{load_frame_sequence, split_train_test, synth_generate, windows, write_frame_sequence, SynthConfig};
use crate::error::{Error, Result};
use crate::inference::{colorize_video, ColorizeOptions, Prior};
use crate::metrics::evaluate;
use crate::model::{init_params, DiscriminatorConfig, GeneratorConfig};
use crate::training::{resume, train, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "chronochroma", version, about = "Video colorization with a 3D conditional GAN")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic frame sequence.
    Synth(SynthArgs),
    /// Train a model on a frame directory.
    Train(TrainArgs),
    /// Colorize a frame directory.
    Colorize(ColorizeArgs),
    /// Score predicted frames against reference frames.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub frames: usize,
    #[arg(long, default_value_t = 32)]
    pub height: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long, default_value_t = 3)]
    pub shapes: usize,
    #[arg(long, default_value_t = 4)]
    pub palette: usize,
    #[arg(long, default_value_t = 6.0)]
    pub motion: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// TOML file with `[train]`, `[generator]` and `[discriminator]` tables.
    /// Command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub window: usize,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Fraction of leading frames used for training; the rest is written to
    /// `test_frames/` in the output directory.
    #[arg(long, default_value_t = 0.75)]
    pub train_fraction: f64,
    #[arg(long)]
    pub gen_depth: Option<usize>,
    #[arg(long)]
    pub gen_filters: Option<usize>,
    #[arg(long)]
    pub gen_max_filters: Option<usize>,
    #[arg(long)]
    pub disc_layers: Option<usize>,
    #[arg(long)]
    pub disc_filters: Option<usize>,
    #[arg(long)]
    pub disc_max_filters: Option<usize>,
    /// Feed the luminance clip to the discriminator as well.
    #[arg(long)]
    pub disc_condition: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PriorArg {
    Uninformative,
}

#[derive(Debug, Args)]
pub struct ColorizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, required_unless_present = "baseline_grayscale")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub window: usize,
    #[arg(long, value_enum, default_value_t = PriorArg::Uninformative)]
    pub prior: PriorArg,
    /// Emit the lightness channel with zero chrominance instead of running a
    /// model.
    #[arg(long)]
    pub baseline_grayscale: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted frames.
    #[arg(long)]
    pub input: PathBuf,
    /// Ground-truth frames.
    #[arg(long)]
    pub reference: PathBuf,
    /// Directory for `report.txt` and `per_frame.csv`.
    #[arg(long)]
    pub output: PathBuf,
    /// Label printed in front of the summary row.
    #[arg(long, default_value = "model")]
    pub label: String,
}

/// Contents of a `--config` file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl TrainArgs {
    /// Resolves the effective configuration: defaults, then the config file,
    /// then flags.
    pub fn resolve(&self) -> Result<ConfigFile> {
        let mut cfg = match &self.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let t = &mut cfg.train;
        set(&mut t.lambda_l1, self.lambda);
        set(&mut t.num_steps, self.steps);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.learning_rate, self.learning_rate);
        set(&mut t.checkpoint_every, self.checkpoint_every);
        if let Some(seed) = self.seed {
            t.seed = seed;
            t.augment.rng_seed = seed;
        }
        let g = &mut cfg.generator;
        set(&mut g.depth, self.gen_depth);
        set(&mut g.base_filters, self.gen_filters);
        set(&mut g.max_filters, self.gen_max_filters);
        let d = &mut cfg.discriminator;
        set(&mut d.num_conv_layers, self.disc_layers);
        set(&mut d.base_filters, self.disc_filters);
        set(&mut d.max_filters, self.disc_max_filters);
        d.condition_on_luminance |= self.disc_condition;
        cfg.train.validate()?;
        cfg.generator.validate()?;
        cfg.discriminator.validate()?;
        Ok(cfg)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => run_synth(&a),
        Command::Train(a) => run_train(&a),
        Command::Colorize(a) => run_colorize(&a),
        Command::Evaluate(a) => run_evaluate(&a),
    }
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    let seq = synth_generate(&SynthConfig {
        height: a.height,
        width: a.width,
        frames: a.frames,
        num_shapes: a.shapes,
        palette_size: a.palette,
        motion_amplitude: a.motion,
        rng_seed: a.seed,
    })?;
    let paths = write_frame_sequence(&seq, &a.output)?;
    println!("wrote {} frames to {}", paths.len(), a.output.display());
    Ok(())
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.resolve()?;
    let seq = load_frame_sequence(&a.input)?;
    let (train_seq, test_seq) = split_train_test(&seq, a.train_fraction)?;
    let samples = windows(&train_seq, a.window)?;
    let (params, opt) = match &a.resume {
        Some(p) => {
            let (params, opt) = resume(p)?;
            (params, Some(opt))
        }
        None => (init_params(cfg.generator, cfg.discriminator, cfg.train.seed)?, None),
    };
    fs::create_dir_all(&a.output).map_err(|e| Error::io(&a.output, e))?;
    write_frame_sequence(&test_seq, &a.output.join("test_frames"))?;
    let used = ConfigFile {
        generator: *params.generator.config(),
        discriminator: *params.discriminator.config(),
        ..cfg
    };
    let cfg_path = a.output.join("config.toml");
    let text = toml::to_string(&used).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))?;

    println!(
        "training on {} clips ({} frames), holding out {} frames",
        samples.len(),
        train_seq.len(),
        test_seq.len()
    );
    let outcome = train(&samples, params, opt, &used.train, &a.output)?;
    if let Some(last) = outcome.records.last() {
        println!("{last}");
    }
    println!("final checkpoint: {}", outcome.final_checkpoint.display());
    Ok(())
}

fn run_colorize(a: &ColorizeArgs) -> Result<()> {
    let prior = match a.prior {
        PriorArg::Uninformative => Prior::Uninformative,
    };
    let out = colorize_video(&ColorizeOptions {
        input_dir: a.input.clone(),
        output_dir: a.output.clone(),
        checkpoint: a.checkpoint.clone(),
        window: a.window,
        prior,
        baseline_grayscale: a.baseline_grayscale,
    })?;
    println!("wrote {} frames to {}", out.frames.len(), a.output.display());
    Ok(())
}

fn run_evaluate(a: &EvaluateArgs) -> Result<()> {
    let pred = load_frame_sequence(&a.input)?;
    let gt = load_frame_sequence(&a.reference)?;
    let report = evaluate(&pred.frames, &gt.frames)?;
    fs::create_dir_all(&a.output).map_err(|e| Error::io(&a.output, e))?;
    report.write_report(&a.output.join("report.txt"))?;
    report.write_csv(&a.output.join("per_frame.csv"))?;
    println!("{}", report.summary_row(&a.label));
    Ok(())
}
