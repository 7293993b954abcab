//! Writes synthetic trials to disk in the trial-directory layout (RGB and
//! depth PNGs, timestamps, JOY and VEL label files) and reads one back.
//!
//! ```text
//! cargo run --release --example synth_dataset -- [out_dir]
//! ```

use std::error::Error;
use std::path::PathBuf;

use wmd::data::{generate_synthetic_trial, list_trial_dirs, read_trial, write_trial};
use wmd::pipeline::SynthConfig;

fn main() -> Result<(), Box<dyn Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("trials"));
    let synth = SynthConfig { participants: 2, speeds: vec![0.5, 1.0], repetitions: 1, seed: 3, ..Default::default() };
    let mut scenes = synth.trials()?;
    for scene in &mut scenes {
        scene.size = 96;
        scene.duration_scale = 0.5;
    }
    for scene in &scenes {
        let trial = generate_synthetic_trial(scene, synth.seed)?;
        let dir = write_trial(&out, &trial)?;
        let joy = trial.joy.transitions().iter().map(|t| format!("{}@{:.2}", t.class, t.time)).collect::<Vec<_>>();
        println!("{}: {} frames, {:.1}s, joy {}", dir.display(), trial.frames.len(), trial.duration(), joy.join(" "));
    }

    let dirs = list_trial_dirs(&out)?;
    let back = read_trial(&dirs[0])?;
    let merged = back.merged_labels()?;
    println!(
        "{} trial directories; {} re-read with {} frames at {} fps and {} merged onsets",
        dirs.len(),
        dirs[0].display(),
        back.frames.len(),
        back.fps,
        merged.len()
    );
    Ok(())
}
