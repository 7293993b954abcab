//! On-disk trial layout: `rgb/%06d.png`, `depth/%06d.png` (16-bit, mm),
//! `labels_joy.csv`, `labels_vel.csv` and `meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use image::ImageReader;
use serde::{Deserialize, Serialize};

use super::{ActionClass, Circuit, Frame, GaitSpeed, LabelSource, LabelTrack, TrialRecording, Transition};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub participant: u32,
    pub speed: GaitSpeed,
    pub circuit: Circuit,
    #[serde(default = "one")]
    pub repetition: u32,
    pub fps: f64,
    #[serde(default)]
    pub frame_count: Option<usize>,
}

fn one() -> u32 {
    1
}

impl TrialMeta {
    pub fn of(trial: &TrialRecording) -> Self {
        Self {
            participant: trial.participant_id,
            speed: trial.gait_speed,
            circuit: trial.circuit,
            repetition: trial.repetition,
            fps: trial.fps,
            frame_count: Some(trial.frames.len()),
        }
    }
}

pub fn trial_dir_name(participant: u32, speed: GaitSpeed, circuit: Circuit, repetition: u32) -> String {
    format!("trial_{participant}_{speed}_{circuit}_r{repetition}")
}

fn frame_name(i: usize) -> String {
    format!("{i:06}.png")
}

fn write_labels(path: &Path, track: &LabelTrack) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["timestamp_s", "class_id"])?;
    for t in track.transitions() {
        w.write_record([format!("{}", t.time), t.class.id().to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_labels(path: &Path, source: LabelSource) -> Result<LabelTrack> {
    let mut r = csv::Reader::from_path(path)?;
    let mut transitions = Vec::new();
    for row in r.deserialize::<(f64, usize)>() {
        let (time, id) = row?;
        transitions.push(Transition { time, class: ActionClass::from_id(id)? });
    }
    LabelTrack::new(source, transitions)
}

/// Writes a trial from a frame stream so long recordings never sit in memory
/// at once. Returns the trial directory.
pub fn write_trial_frames(
    root: &Path,
    meta: &TrialMeta,
    joy: &LabelTrack,
    vel: &LabelTrack,
    frames: impl IntoIterator<Item = Frame>,
) -> Result<PathBuf> {
    let dir = root.join(trial_dir_name(meta.participant, meta.speed, meta.circuit, meta.repetition));
    for sub in ["rgb", "depth"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut count = 0;
    for (i, frame) in frames.into_iter().enumerate() {
        let rgb_path = dir.join("rgb").join(frame_name(i));
        frame.rgb.save(&rgb_path).map_err(|source| Error::Image { path: rgb_path, source })?;
        let depth_path = dir.join("depth").join(frame_name(i));
        frame.depth.save(&depth_path).map_err(|source| Error::Image { path: depth_path, source })?;
        count += 1;
    }
    write_labels(&dir.join("labels_joy.csv"), joy)?;
    write_labels(&dir.join("labels_vel.csv"), vel)?;
    let meta = TrialMeta { frame_count: Some(count), ..meta.clone() };
    let meta_path = dir.join("meta.json");
    fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(meta_path, e))?;
    Ok(dir)
}

pub fn write_trial(root: &Path, trial: &TrialRecording) -> Result<PathBuf> {
    write_trial_frames(root, &TrialMeta::of(trial), &trial.joy, &trial.vel, trial.frames.iter().cloned())
}

pub fn read_meta(dir: &Path) -> Result<TrialMeta> {
    let path = dir.join("meta.json");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// The joystick and velocity label tracks of a trial directory.
pub fn read_trial_labels(dir: &Path) -> Result<(LabelTrack, LabelTrack)> {
    Ok((read_labels(&dir.join("labels_joy.csv"), LabelSource::Joy)?, read_labels(&dir.join("labels_vel.csv"), LabelSource::Vel)?))
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Loads a trial directory; frame `i` gets timestamp `i / fps`.
pub fn read_trial(dir: &Path) -> Result<TrialRecording> {
    let meta = read_meta(dir)?;
    let (joy, vel) = read_trial_labels(dir)?;
    let mut frames = Vec::new();
    for i in 0.. {
        let rgb_path = dir.join("rgb").join(frame_name(i));
        if !rgb_path.exists() {
            break;
        }
        let rgb = open(&rgb_path)?.into_rgb8();
        let depth = open(&dir.join("depth").join(frame_name(i)))?.into_luma16();
        frames.push(Frame::new(rgb, depth, i as f64 / meta.fps)?);
    }
    if let Some(expected) = meta.frame_count {
        if expected != frames.len() {
            return Err(Error::Data(format!("{}: meta lists {expected} frames, found {}", dir.display(), frames.len())));
        }
    }
    Ok(TrialRecording {
        participant_id: meta.participant,
        gait_speed: meta.speed,
        circuit: meta.circuit,
        repetition: meta.repetition,
        fps: meta.fps,
        frames,
        joy,
        vel,
    })
}

/// Trial directories directly under `root`, sorted by name.
pub fn list_trial_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_dir() && path.join("meta.json").exists() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_trial, SyntheticSceneConfig};

    #[test]
    fn round_trip_through_disk() {
        let cfg = SyntheticSceneConfig { size: 32, duration_scale: 0.05, noise_level: 0.05, ..Default::default() };
        let trial = generate_synthetic_trial(&cfg, 2).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_trial(tmp.path(), &trial).unwrap();
        assert!(dir.ends_with("trial_1_0.7_right_wide_r1"));
        let back = read_trial(&dir).unwrap();
        assert_eq!(back.frames.len(), trial.frames.len());
        for (a, b) in back.frames.iter().zip(&trial.frames) {
            assert_eq!(a.rgb, b.rgb);
            assert_eq!(a.depth, b.depth);
        }
        assert_eq!(back.joy.transitions(), trial.joy.transitions());
        assert_eq!(list_trial_dirs(tmp.path()).unwrap(), vec![dir]);
    }
}
