//! Encodes one window from the middle of a synthetic turn four ways (ADD and
//! DIF, cropped and full frame) and writes each as a PNG.
//!
//! ```text
//! cargo run --release --example encode_window -- [out_dir]
//! ```

use std::error::Error;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use wmd::data::{generate_synthetic_trial, Circuit, SyntheticSceneConfig};
use wmd::encoder::{encode_window, make_windows, EncoderConfig, Image, InputForm};

fn save_rgb(img: &Image, path: &Path) -> Result<(), Box<dyn Error>> {
    let px = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let out = RgbImage::from_fn(img.width as u32, img.height as u32, |x, y| {
        let (r, c) = (y as usize, x as usize);
        Rgb([px(img.get(r, c, 0)), px(img.get(r, c, 1)), px(img.get(r, c, 2))])
    });
    out.save(path)?;
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("encoded"));
    std::fs::create_dir_all(&out)?;

    let scene = SyntheticSceneConfig { size: 160, circuit: Circuit::LeftWide, ..Default::default() };
    let trial = generate_synthetic_trial(&scene, 1)?.downsampled();
    let labels = trial.merged_labels()?;
    let turn = labels.transitions().iter().find(|t| t.class.is_turn()).expect("circuit has a turn");

    let defaults = EncoderConfig::default();
    let windows = make_windows(trial.frames.len(), defaults.window_len, defaults.stride)?;
    let window = windows
        .iter()
        .find(|w| trial.frames[w.last()].timestamp >= turn.time + 1.0)
        .expect("trial continues after the turn starts");
    println!(
        "{} frames at {} fps, {} windows; encoding frames {:?} ({})",
        trial.frames.len(),
        trial.fps,
        windows.len(),
        window.indices(),
        turn.class
    );

    for form in [InputForm::Add, InputForm::Dif] {
        for crop in [true, false] {
            let cfg = EncoderConfig { form, crop, input_size: 128, ..Default::default() };
            let enc = encode_window(&trial.frames, *window, &cfg)?;
            let (lo, hi) = enc.image.min_max();
            let name = format!("{}_{}.png", form.name(), if crop { "crop" } else { "full" });
            save_rgb(&enc.image, &out.join(&name))?;
            println!("{name}: {}x{}, values in [{lo:.3}, {hi:.3}], mean {:.3}", enc.image.width, enc.image.height, enc.image.mean());
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}
