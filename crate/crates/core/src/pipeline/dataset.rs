//! In-memory dataset assembly: which windows of a trial become samples, and
//! their encoded inputs and human masks.

use serde::{Deserialize, Serialize};

use crate::data::{
    extract_balanced_frames, merge_labels, trial_dir_name, ActionClass, Circuit, LabelTrack, SplitLayout, SplitRole,
    SyntheticSceneConfig, TrialRecording, DEFAULT_BOUNDARY_MARGIN,
};
use crate::encoder::{encode_window, EncodedInput, EncoderConfig, Window};
use crate::error::{Error, Result};
use crate::masks::{composite_window_mask, frame_mask, FrameMask, HumanMask, MaskConfig};
use crate::simulate::GtTrack;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepareConfig {
    /// Frames drawn from each labeled segment.
    pub frames_per_segment: usize,
    /// Frames skipped at both ends of a segment.
    pub margin: usize,
    pub split: SplitLayout,
    pub labels: GtTrack,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self { frames_per_segment: 40, margin: DEFAULT_BOUNDARY_MARGIN, split: SplitLayout::Paper, labels: GtTrack::Merged }
    }
}

/// One training/evaluation sample: a window of a trial at the working rate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub id: String,
    pub trial: String,
    pub participant: u32,
    pub role: SplitRole,
    pub window: Window,
    pub class: ActionClass,
}

pub fn trial_name(trial: &TrialRecording) -> String {
    trial_dir_name(trial.participant_id, trial.gait_speed, trial.circuit, trial.repetition)
}

/// Balanced windows of a (down-sampled) trial, each ending on an extracted
/// frame and labeled with the class at that frame. Windows that would start
/// before the first frame are shifted forward.
pub fn trial_samples(trial: &TrialRecording, role: SplitRole, cfg: &PrepareConfig, window_len: usize) -> Result<Vec<SampleSpec>> {
    let labels = labels_for(cfg.labels, &trial.joy, &trial.vel)?;
    sample_windows(&trial_name(trial), trial.participant_id, &trial.timestamps(), &labels, role, cfg, window_len)
}

pub fn labels_for(track: GtTrack, joy: &LabelTrack, vel: &LabelTrack) -> Result<LabelTrack> {
    Ok(match track {
        GtTrack::Merged => merge_labels(joy, vel)?,
        GtTrack::Joy => joy.clone(),
        GtTrack::Vel => vel.clone(),
    })
}

/// [`trial_samples`] from frame times alone, so a trial need not be decoded.
pub fn sample_windows(
    name: &str,
    participant: u32,
    timestamps: &[f64],
    labels: &LabelTrack,
    role: SplitRole,
    cfg: &PrepareConfig,
    window_len: usize,
) -> Result<Vec<SampleSpec>> {
    if timestamps.len() < window_len || window_len == 0 {
        return Err(Error::Window { required: window_len.max(1), got: timestamps.len() });
    }
    let picks = extract_balanced_frames(timestamps, labels, cfg.frames_per_segment, cfg.margin)?;
    Ok(picks
        .into_iter()
        .map(|(idx, class)| {
            let last = idx.max(window_len - 1);
            let window = Window::ending_at(last, window_len).expect("last >= len - 1");
            SampleSpec { id: format!("{name}_f{last:05}"), trial: name.to_string(), participant, role, window, class }
        })
        .collect())
}

/// Encoded input (labeled) and, when `masks` is given, the matching human
/// mask for every sample of one trial. Windows with a corrupted frame mask
/// get a mask flagged as corrupted.
pub fn materialize(
    trial: &TrialRecording,
    specs: &[SampleSpec],
    encoder: &EncoderConfig,
    masks: Option<&MaskConfig>,
) -> Result<Vec<(EncodedInput, Option<HumanMask>)>> {
    let inputs = encode_samples(trial, specs, encoder)?;
    let masks = match masks {
        Some(cfg) => window_masks(trial, specs, &[encoder], cfg)?.into_iter().map(|mut m| m.pop()).collect(),
        None => vec![None; specs.len()],
    };
    Ok(inputs.into_iter().zip(masks).collect())
}

pub fn encode_samples(trial: &TrialRecording, specs: &[SampleSpec], encoder: &EncoderConfig) -> Result<Vec<EncodedInput>> {
    specs
        .iter()
        .map(|s| {
            let mut input = encode_window(&trial.frames, s.window, encoder)?;
            input.class = Some(s.class);
            Ok(input)
        })
        .collect()
}

/// Human masks of every sample, one per encoder geometry. Frame masks are
/// computed once and shared between overlapping windows.
pub fn window_masks(
    trial: &TrialRecording,
    specs: &[SampleSpec],
    encoders: &[&EncoderConfig],
    cfg: &MaskConfig,
) -> Result<Vec<Vec<HumanMask>>> {
    let mut frame_masks: Vec<Option<FrameMask>> = vec![None; trial.frames.len()];
    let first = trial.frames.first().ok_or(Error::Window { required: 1, got: 0 })?;
    let (w, h) = (first.width(), first.height());
    let mut out = Vec::with_capacity(specs.len());
    for s in specs {
        if s.window.indices().end > trial.frames.len() {
            return Err(Error::Window { required: s.window.indices().end, got: trial.frames.len() });
        }
        for i in s.window.indices() {
            if frame_masks[i].is_none() {
                frame_masks[i] = Some(frame_mask(&trial.frames[i].depth, cfg));
            }
        }
        let members: Vec<&FrameMask> = s.window.indices().map(|i| frame_masks[i].as_ref().unwrap()).collect();
        let mut per_encoder = Vec::with_capacity(encoders.len());
        for enc in encoders {
            per_encoder.push(match composite_window_mask(&members, enc.form, &enc.geometry(w, h), s.window.start) {
                Ok(m) => m,
                Err(Error::CorruptedWindow { start }) => HumanMask {
                    size: enc.input_size,
                    mask: vec![false; enc.input_size * enc.input_size],
                    corrupted: true,
                    source_window: start,
                },
                Err(e) => return Err(e),
            });
        }
        out.push(per_encoder);
    }
    Ok(out)
}

/// Participants, speeds, circuits and repetitions to synthesize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub participants: u32,
    pub speeds: Vec<f64>,
    pub circuits: Vec<Circuit>,
    pub repetitions: u32,
    pub seed: u64,
    /// Template for every trial; participant, speed, circuit and repetition
    /// are filled in per trial.
    pub scene: SyntheticSceneConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            participants: 15,
            speeds: vec![0.5, 0.7, 1.0],
            circuits: vec![Circuit::RightWide, Circuit::RightTight, Circuit::LeftWide, Circuit::LeftTight],
            repetitions: 2,
            seed: 0,
            scene: SyntheticSceneConfig::default(),
        }
    }
}

impl SynthConfig {
    /// Scene configurations of every trial, in a fixed order. All trials share
    /// `seed`; scenes derive per-participant and per-trial streams from it.
    pub fn trials(&self) -> Result<Vec<SyntheticSceneConfig>> {
        if self.participants == 0 || self.repetitions == 0 || self.speeds.is_empty() || self.circuits.is_empty() {
            return Err(Error::Config("synthetic dataset must have participants, speeds, circuits and repetitions".into()));
        }
        let mut out = Vec::new();
        for p in 1..=self.participants {
            for &speed in &self.speeds {
                for &circuit in &self.circuits {
                    for rep in 1..=self.repetitions {
                        let cfg = SyntheticSceneConfig {
                            participant_id: p,
                            gait_speed: speed,
                            circuit,
                            repetition: rep,
                            ..self.scene.clone()
                        };
                        cfg.validate()?;
                        out.push(cfg);
                    }
                }
            }
        }
        Ok(out)
    }
}

pub fn split_role(split: &crate::data::DatasetSplit, participant: u32) -> Result<SplitRole> {
    split.role(participant).ok_or_else(|| Error::Split(format!("participant {participant} is in no split")))
}
