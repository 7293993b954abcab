//! Command-line front end over [`Pipeline`]. Flags override values from the
//! config file; the cache root comes from `--cache-dir`, then
//! `WMD_CACHE_DIR`, then the config file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::encoder::InputForm;
use crate::error::{Error, Result};
use crate::models::{Backbone, ModelConfig};
use crate::pipeline::{Pipeline, PipelineConfig, StageOutcome, CACHE_ENV};
use crate::simulate::GtTrack;
use crate::train::Task;

#[derive(Debug, Parser)]
#[command(name = "wmd", version, about = "Walker motion decoding pipeline over a cached artifact tree")]
pub struct Cli {
    /// TOML config with one section per module; defaults apply when omitted.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,

    /// Artifact cache root.
    #[arg(long, global = true, env = CACHE_ENV)]
    pub cache_dir: Option<PathBuf>,

    /// Seed for synthesis, model initialization and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Encoded input form (dif or add).
    #[arg(long, global = true)]
    pub form: Option<InputForm>,

    /// Crop the region of interest before resizing.
    #[arg(long, global = true)]
    pub crop: Option<bool>,

    /// Side of the square model input.
    #[arg(long, global = true)]
    pub input_size: Option<usize>,

    /// Print only errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic trial directories.
    Synth(SynthArgs),
    /// Split participants and select balanced sample windows.
    Prepare(PrepareArgs),
    /// Encode every sample window into cached tensors.
    Encode,
    /// Build human masks for every sample window from depth.
    Masks,
    /// Train the classifier (cls) or the segmenter (seg).
    Train(TrainArgs),
    /// Offline metrics of the trained classifier on validation and test.
    Eval,
    /// grad-CAM focus against human masks on the test split.
    Focus,
    /// Replay trials online through the classifier and the debouncer.
    Simulate(SimulateArgs),
    /// Collect results into report.json and report.md.
    Report,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of participants (ids 1..=N).
    #[arg(long)]
    pub participants: Option<u32>,
    /// Comma-separated gait speeds in m/s.
    #[arg(long, value_delimiter = ',')]
    pub speeds: Option<Vec<f64>>,
    /// Repetitions of each circuit per speed.
    #[arg(long)]
    pub repetitions: Option<u32>,
    /// Frame side in pixels.
    #[arg(long)]
    pub size: Option<u32>,
    /// Multiplier on every segment duration.
    #[arg(long)]
    pub duration_scale: Option<f64>,
    /// Standard deviation of the pixel noise.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Use recorded trial directories instead of synthesized ones.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Frames drawn from each labeled segment.
    #[arg(long)]
    pub frames_per_segment: Option<usize>,
    /// Label track used for samples (merged, joy or vel).
    #[arg(long)]
    pub labels: Option<GtTrack>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TaskArg {
    Cls,
    Seg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// What to train.
    #[arg(long, value_enum)]
    pub task: TaskArg,
    /// Classifier backbone (vgg_style, residual or encoder_classifier).
    #[arg(long)]
    pub backbone: Option<Backbone>,
    /// Add channel attention after the backbone.
    #[arg(long)]
    pub attention: Option<bool>,
    /// Channel width multiplier in (0, 1].
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Trial directories to replay; defaults to the test split.
    #[arg(long = "trial")]
    pub trials: Vec<PathBuf>,
    /// Also draw label and metric traces as PNG.
    #[arg(long)]
    pub plot: bool,
    /// Ground-truth track (merged, joy or vel).
    #[arg(long)]
    pub gt_track: Option<GtTrack>,
    /// Minimum action duration of the debouncer in seconds.
    #[arg(long)]
    pub min_duration: Option<f64>,
}

impl Cli {
    /// Config file values with every given flag applied on top.
    pub fn resolve_config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.synth.seed = seed;
            for m in [&mut cfg.model, &mut cfg.seg_model] {
                m.seed = seed;
            }
            for t in [&mut cfg.train, &mut cfg.train_seg] {
                t.seed = seed;
            }
        }
        if let Some(f) = self.form {
            cfg.encoder.form = f;
        }
        if let Some(c) = self.crop {
            cfg.encoder.crop = c;
        }
        if let Some(n) = self.input_size {
            cfg.encoder.input_size = n;
            cfg.model.input_size = n;
        }
        match &self.command {
            Command::Synth(a) => {
                let s = &mut cfg.synth;
                s.participants = a.participants.unwrap_or(s.participants);
                s.speeds = a.speeds.clone().unwrap_or(std::mem::take(&mut s.speeds));
                s.repetitions = a.repetitions.unwrap_or(s.repetitions);
                s.scene.size = a.size.unwrap_or(s.scene.size);
                s.scene.duration_scale = a.duration_scale.unwrap_or(s.scene.duration_scale);
                s.scene.noise_level = a.noise.unwrap_or(s.scene.noise_level);
            }
            Command::Prepare(a) => {
                if a.data_dir.is_some() {
                    cfg.data_dir = a.data_dir.clone();
                }
                cfg.prepare.frames_per_segment = a.frames_per_segment.unwrap_or(cfg.prepare.frames_per_segment);
                cfg.prepare.labels = a.labels.unwrap_or(cfg.prepare.labels);
            }
            Command::Train(a) => {
                let (model, train) = match a.task {
                    TaskArg::Cls => (&mut cfg.model, &mut cfg.train),
                    TaskArg::Seg => (&mut cfg.seg_model, &mut cfg.train_seg),
                };
                if let Some(b) = a.backbone {
                    if a.task == TaskArg::Seg {
                        return Err(Error::Config("--backbone applies to the classifier only".into()));
                    }
                    model.backbone = b;
                    model.frozen_layers = ModelConfig::new(b).frozen_layers;
                }
                model.attention = a.attention.unwrap_or(model.attention);
                model.scale = a.scale.unwrap_or(model.scale);
                train.max_epochs = a.epochs.unwrap_or(train.max_epochs);
                train.learning_rate = a.lr.unwrap_or(train.learning_rate);
                train.batch_size = a.batch_size.unwrap_or(train.batch_size);
            }
            Command::Simulate(a) => {
                cfg.simulate.gt_track = a.gt_track.unwrap_or(cfg.simulate.gt_track);
                cfg.simulate.min_duration_s = a.min_duration.unwrap_or(cfg.simulate.min_duration_s);
            }
            Command::Encode | Command::Masks | Command::Eval | Command::Focus | Command::Report => {}
        }
        if let Some(dir) = &self.cache_dir {
            cfg.cache_dir = dir.clone();
        }
        Ok(cfg)
    }

    pub fn run(&self) -> Result<StageOutcome> {
        let cfg = self.resolve_config()?;
        let root = cfg.cache_root();
        let quiet = self.quiet;
        let mut pipeline = Pipeline::new(cfg, root)?.with_progress(move |msg| {
            if !quiet {
                eprintln!("{msg}");
            }
        });
        match &self.command {
            Command::Synth(_) => pipeline.synth(),
            Command::Prepare(_) => pipeline.prepare(),
            Command::Encode => pipeline.encode(),
            Command::Masks => pipeline.masks(),
            Command::Train(a) => pipeline.train(match a.task {
                TaskArg::Cls => Task::Classification,
                TaskArg::Seg => Task::Segmentation,
            }),
            Command::Eval => pipeline.eval(),
            Command::Focus => pipeline.focus(),
            Command::Simulate(a) => pipeline.simulate((!a.trials.is_empty()).then_some(a.trials.as_slice()), a.plot),
            Command::Report => pipeline.report(),
        }
    }
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match cli.run() {
        Ok(outcome) => {
            if !cli.quiet {
                let status = if outcome.up_to_date { "up to date" } else { "written" };
                println!("{}: {status} ({})", outcome.stage, outcome.dir.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
