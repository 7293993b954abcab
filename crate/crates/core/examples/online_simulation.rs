//! Replays an untrimmed synthetic trial window by window: a noisy scripted
//! predictor, the debouncer, streaming metrics and per-transition delays.
//! Writes the label and metric traces as a PNG.
//!
//! ```text
//! cargo run --release --example online_simulation -- [plot.png]
//! ```

use std::error::Error;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wmd::data::{generate_synthetic_trial, ActionClass, Circuit, SyntheticSceneConfig};
use wmd::encoder::EncoderConfig;
use wmd::simulate::{plot_run, run_trial, OraclePredictor, ScriptedPredictor, SimulationConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let plot = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("simulation.png"));
    let scene = SyntheticSceneConfig { size: 48, circuit: Circuit::RightTight, gait_speed: 0.5, ..Default::default() };
    let trial = generate_synthetic_trial(&scene, 2)?;
    let encoder = EncoderConfig::default();
    let sim = SimulationConfig::default();

    let mut oracle = OraclePredictor { labels: trial.merged_labels()? };
    let truth = run_trial(&trial, &mut oracle, &encoder, &sim)?.gt;

    // a third of the windows in the second after each true transition get a random class
    let times = run_trial(&trial, &mut oracle, &encoder, &sim)?.times;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut since = f64::NEG_INFINITY;
    let mut noisy = Vec::with_capacity(truth.len());
    for (i, &c) in truth.iter().enumerate() {
        if i > 0 && c != truth[i - 1] {
            since = times[i];
        }
        let near = times[i] - since < 1.0;
        noisy.push(if near && rng.gen_bool(0.3) { ActionClass::ALL[rng.gen_range(0..4)] } else { c });
    }
    let run = run_trial(&trial, &mut ScriptedPredictor { labels: noisy }, &encoder, &sim)?;

    let agree = |a: &[ActionClass]| a.iter().zip(&run.gt).filter(|(x, y)| x == y).count() as f64 / run.gt.len() as f64;
    println!("{} windows; raw agreement {:.3}, debounced agreement {:.3}", run.times.len(), agree(&run.raw), agree(&run.post));
    let last = run.online.last().expect("at least one window");
    println!("final IA {:.3}  wIA {:.3}  IP {:.3}  cIP {:.3}", last.ia, last.wia, last.ip, last.cip);
    for d in &run.delays.transitions {
        match d.delay {
            Some(delay) => println!("  {} at {:.2}s: detected at {:.2}s ({delay:+.2}s)", d.class, d.gt_time, d.pred_time.unwrap()),
            None => println!("  {} at {:.2}s: missed", d.class, d.gt_time),
        }
    }
    plot_run(&plot, &run)?;
    println!("wrote {}", plot.display());
    Ok(())
}
