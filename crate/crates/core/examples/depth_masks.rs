//! Builds human masks from depth: floor removal, largest component, hole
//! filling and the corruption check, then the window mask on the model grid.
//!
//! ```text
//! cargo run --release --example depth_masks -- [out_dir]
//! ```

use std::error::Error;
use std::path::PathBuf;

use wmd::data::{generate_synthetic_trial, SyntheticSceneConfig};
use wmd::encoder::{make_windows, EncoderConfig};
use wmd::masks::{composite_window_mask, fit_floor, frame_mask, write_mask_png, MaskConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("masks"));
    std::fs::create_dir_all(&out)?;

    let trial = generate_synthetic_trial(&SyntheticSceneConfig { size: 160, ..Default::default() }, 3)?.downsampled();
    let cfg = MaskConfig::default();
    let encoder = EncoderConfig { input_size: 96, ..Default::default() };

    let frame = &trial.frames[trial.frames.len() / 2];
    if let Some((a, b)) = fit_floor(&frame.depth, &cfg) {
        println!("floor plane: depth = {a:.2} * row + {b:.1} mm");
    }
    let fm = frame_mask(&frame.depth, &cfg);
    println!("frame mask covers {:.1}% of the frame, corrupted: {}", 100.0 * fm.mask.fraction(), fm.corrupted);
    write_mask_png(&out.join("frame.png"), fm.mask.width, fm.mask.height, &fm.mask.data)?;

    let (w, h) = (frame.width(), frame.height());
    let geometry = encoder.geometry(w, h);
    let windows = make_windows(trial.frames.len(), encoder.window_len, encoder.stride)?;
    let mut kept = 0;
    let mut corrupted = 0;
    for (i, window) in windows.iter().enumerate().step_by(25) {
        let members: Vec<_> = window.indices().map(|k| frame_mask(&trial.frames[k].depth, &cfg)).collect();
        let refs: Vec<_> = members.iter().collect();
        match composite_window_mask(&refs, encoder.form, &geometry, window.start) {
            Ok(m) => {
                write_mask_png(&out.join(format!("window_{i:04}.png")), m.size, m.size, &m.mask)?;
                println!("window {i:4}: mask fraction {:.3} on the {}x{} input", m.fraction(), m.size, m.size);
                kept += 1;
            }
            Err(e) => {
                println!("window {i:4}: {e}");
                corrupted += 1;
            }
        }
    }
    println!("{kept} window masks written, {corrupted} corrupted, in {}", out.display());
    Ok(())
}
