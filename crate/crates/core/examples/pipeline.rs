//! Runs every stage of the cached pipeline on a small synthetic dataset and
//! prints the report. A second run finds every stage up to date.
//!
//! ```text
//! cargo run --release --example pipeline -- [cache_dir]
//! ```
//!
//! The full desk-scale configuration lives in `configs/desk.toml`; pass it to
//! the `wmd` binary with `--config` for the same stages from the command line.

use std::error::Error;
use std::path::PathBuf;

use wmd::data::SplitLayout;
use wmd::models::{Backbone, ModelConfig};
use wmd::pipeline::{Pipeline, PipelineConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("wmd-cache"));
    let mut cfg = PipelineConfig::default();
    cfg.synth.participants = 3;
    cfg.synth.speeds = vec![0.7];
    cfg.synth.scene.size = 64;
    cfg.synth.scene.duration_scale = 0.35;
    cfg.prepare.frames_per_segment = 4;
    cfg.prepare.split = SplitLayout::Ratios { train: 0.34, val: 0.33, test: 0.33 };
    cfg.encoder.input_size = 64;
    cfg.model = ModelConfig { attention: true, scale: 0.125, input_size: 64, ..ModelConfig::new(Backbone::Residual) };
    cfg.train.learning_rate = 0.05;
    cfg.train.batch_size = 16;
    cfg.train.max_epochs = 3;

    let mut pipeline = Pipeline::new(cfg, &root)?.with_progress(|m| eprintln!("  {m}"));
    for outcome in pipeline.run_all()? {
        let state = if outcome.up_to_date { "up to date" } else { "written" };
        println!("{:>9}: {state} ({})", outcome.stage, outcome.dir.display());
    }
    let report = std::fs::read_to_string(root.join("report/report.md"))?;
    println!("\n{report}");

    let again = pipeline.run_all()?;
    println!("second run: {} of {} stages up to date", again.iter().filter(|o| o.up_to_date).count(), again.len());
    Ok(())
}
