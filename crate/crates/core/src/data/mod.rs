//! Trial recordings, label tracks and dataset preparation.

mod synthetic;
mod trial_dir;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use image::{ImageBuffer, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synthetic::{generate_synthetic_trial, SceneGeometry, SegmentSpec, SyntheticScene, SyntheticSceneConfig};
pub use trial_dir::{list_trial_dirs, read_meta, read_trial, read_trial_labels, trial_dir_name, write_trial, write_trial_frames, TrialMeta};

/// 16-bit depth image in millimetres; 0 marks an invalid pixel.
pub type DepthImage = ImageBuffer<Luma<u16>, Vec<u16>>;

/// Recorded camera rate.
pub const RECORDED_FPS: f64 = 30.0;
/// Working rate after down-sampling.
pub const WORKING_FPS: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionClass {
    Stop = 0,
    Walk = 1,
    TurnRight = 2,
    TurnLeft = 3,
}

impl ActionClass {
    pub const ALL: [ActionClass; 4] = [Self::Stop, Self::Walk, Self::TurnRight, Self::TurnLeft];
    pub const COUNT: usize = 4;

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Result<Self> {
        Self::ALL.get(id).copied().ok_or(Error::Class(id))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Stop => "stop",
            Self::Walk => "walk",
            Self::TurnRight => "turn_right",
            Self::TurnLeft => "turn_left",
        }
    }

    pub fn is_turn(self) -> bool {
        matches!(self, Self::TurnRight | Self::TurnLeft)
    }
}

impl fmt::Display for ActionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown action class `{s}`")))
    }
}

/// One synchronised RGB-D sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub rgb: RgbImage,
    pub depth: DepthImage,
    pub timestamp: f64,
}

impl Frame {
    pub fn new(rgb: RgbImage, depth: DepthImage, timestamp: f64) -> Result<Self> {
        if rgb.dimensions() != depth.dimensions() {
            return Err(Error::Shape(format!(
                "rgb {:?} and depth {:?} differ",
                rgb.dimensions(),
                depth.dimensions()
            )));
        }
        Ok(Self { rgb, depth, timestamp })
    }

    pub fn width(&self) -> usize {
        self.rgb.width() as usize
    }

    pub fn height(&self) -> usize {
        self.rgb.height() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// Operator joystick marks (user intention).
    Joy,
    /// Walker velocity commands (device action).
    Vel,
    /// Latest-of-both merge.
    Merged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub time: f64,
    pub class: ActionClass,
}

/// Ordered class onsets; the class of a transition holds until the next one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTrack {
    pub source: LabelSource,
    transitions: Vec<Transition>,
}

impl LabelTrack {
    pub fn new(source: LabelSource, transitions: Vec<Transition>) -> Result<Self> {
        for (i, pair) in transitions.windows(2).enumerate() {
            if pair[1].time < pair[0].time {
                return Err(Error::Data(format!("transition {} is earlier than transition {i}", i + 1)));
            }
            if pair[1].class == pair[0].class {
                return Err(Error::Data(format!("transitions {i} and {} repeat class {}", i + 1, pair[0].class)));
            }
        }
        Ok(Self { source, transitions })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Class active at `t`: the last transition at or before `t` (the first
    /// class for times before the first onset).
    pub fn class_at(&self, t: f64) -> Option<ActionClass> {
        let first = self.transitions.first()?;
        let idx = self.transitions.partition_point(|tr| tr.time <= t);
        Some(if idx == 0 { first.class } else { self.transitions[idx - 1].class })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct GaitSpeed(f64);

impl GaitSpeed {
    pub const ALLOWED: [f64; 3] = [0.5, 0.7, 1.0];

    pub fn new(mps: f64) -> Result<Self> {
        if Self::ALLOWED.iter().any(|&s| (s - mps).abs() < 1e-9) {
            Ok(Self(mps))
        } else {
            Err(Error::Config(format!("gait speed {mps} m/s is not one of 0.5, 0.7, 1.0")))
        }
    }

    pub fn mps(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for GaitSpeed {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<GaitSpeed> for f64 {
    fn from(s: GaitSpeed) -> f64 {
        s.0
    }
}

impl fmt::Display for GaitSpeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Circuit {
    RightWide,
    RightTight,
    LeftWide,
    LeftTight,
}

impl Circuit {
    pub const ALL: [Circuit; 4] = [Self::RightWide, Self::RightTight, Self::LeftWide, Self::LeftTight];

    pub fn name(self) -> &'static str {
        match self {
            Self::RightWide => "right_wide",
            Self::RightTight => "right_tight",
            Self::LeftWide => "left_wide",
            Self::LeftTight => "left_tight",
        }
    }

    pub fn turn(self) -> ActionClass {
        match self {
            Self::RightWide | Self::RightTight => ActionClass::TurnRight,
            Self::LeftWide | Self::LeftTight => ActionClass::TurnLeft,
        }
    }

    /// Radius of the 90° turn, metres.
    pub fn turn_radius_m(self) -> f64 {
        match self {
            Self::RightWide | Self::LeftWide => 1.5,
            Self::RightTight | Self::LeftTight => 1.0,
        }
    }
}

impl fmt::Display for Circuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Circuit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown circuit `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecording {
    pub participant_id: u32,
    pub gait_speed: GaitSpeed,
    pub circuit: Circuit,
    pub repetition: u32,
    pub fps: f64,
    pub frames: Vec<Frame>,
    pub joy: LabelTrack,
    pub vel: LabelTrack,
}

impl TrialRecording {
    /// Keeps every other frame (30 Hz to 15 Hz).
    pub fn downsampled(mut self) -> Self {
        self.frames = downsample_stream(std::mem::take(&mut self.frames));
        self.fps /= 2.0;
        self
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.timestamp).collect()
    }

    pub fn merged_labels(&self) -> Result<LabelTrack> {
        merge_labels(&self.joy, &self.vel)
    }

    pub fn duration(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => b.timestamp - a.timestamp,
            _ => 0.0,
        }
    }
}

/// Halves the rate of a time-ordered stream by keeping even indices.
pub fn downsample_stream<T>(items: Vec<T>) -> Vec<T> {
    items.into_iter().step_by(2).collect()
}

/// Marks each class onset at the later of the two label sources.
pub fn merge_labels(joy: &LabelTrack, vel: &LabelTrack) -> Result<LabelTrack> {
    let (a, b) = (joy.transitions(), vel.transitions());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x.class != y.class {
            return Err(Error::Alignment { index: i, detail: format!("joy has {}, vel has {}", x.class, y.class) });
        }
    }
    if a.len() != b.len() {
        let index = a.len().min(b.len());
        return Err(Error::Alignment { index, detail: format!("joy has {} transitions, vel has {}", a.len(), b.len()) });
    }
    let merged = a.iter().zip(b).map(|(x, y)| Transition { time: x.time.max(y.time), class: x.class }).collect();
    LabelTrack::new(LabelSource::Merged, merged)
}

/// Frames kept clear of each action boundary when sampling a segment.
pub const DEFAULT_BOUNDARY_MARGIN: usize = 2;

/// A maximal run of frames sharing one label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub class: ActionClass,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Splits a frame sequence into label segments.
pub fn segments(timestamps: &[f64], labels: &LabelTrack) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (i, &t) in timestamps.iter().enumerate() {
        let Some(class) = labels.class_at(t) else { continue };
        match out.last_mut() {
            Some(seg) if seg.class == class && seg.end == i => seg.end = i + 1,
            _ => out.push(Segment { start: i, end: i + 1, class }),
        }
    }
    out
}

/// Picks `n` indices centred in `[start + margin, end - margin)` with a
/// uniform integer stride.
pub fn select_in_segment(segment_id: usize, start: usize, end: usize, n: usize, margin: usize) -> Result<Vec<usize>> {
    let len = end.saturating_sub(start);
    let required = n + 2 * margin;
    if len < required {
        return Err(Error::SegmentTooShort { segment: segment_id, len, required });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let usable = len - 2 * margin;
    let stride = usable / n;
    let span = (n - 1) * stride + 1;
    let first = start + margin + (usable - span) / 2;
    Ok((0..n).map(|i| first + i * stride).collect())
}

/// Balanced sampling of `n` frames per labelled segment, away from boundaries.
///
/// Returned indices refer to `timestamps`.
pub fn extract_balanced_frames(
    timestamps: &[f64],
    labels: &LabelTrack,
    n: usize,
    margin: usize,
) -> Result<Vec<(usize, ActionClass)>> {
    let mut out = Vec::new();
    for (id, seg) in segments(timestamps, labels).iter().enumerate() {
        for idx in select_in_segment(id, seg.start, seg.end, n, margin)? {
            out.push((idx, seg.class));
        }
    }
    Ok(out)
}

/// Participant partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: BTreeSet<u32>,
    pub val: BTreeSet<u32>,
    pub test: BTreeSet<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitLayout {
    /// Fixed 15-participant assignment (validation 5; test 8, 11, 15).
    Paper,
    /// Fractions of the sorted participant list; val and test are floored and
    /// the remainder goes to train.
    Ratios { train: f64, val: f64, test: f64 },
}

impl DatasetSplit {
    pub fn new(train: BTreeSet<u32>, val: BTreeSet<u32>, test: BTreeSet<u32>) -> Result<Self> {
        for (a, b, name) in [(&train, &val, "train/val"), (&train, &test, "train/test"), (&val, &test, "val/test")] {
            if let Some(id) = a.intersection(b).next() {
                return Err(Error::Split(format!("participant {id} appears in both {name}")));
            }
        }
        Ok(Self { train, val, test })
    }

    pub fn all(&self) -> BTreeSet<u32> {
        self.train.iter().chain(&self.val).chain(&self.test).copied().collect()
    }

    pub fn role(&self, participant: u32) -> Option<SplitRole> {
        if self.train.contains(&participant) {
            Some(SplitRole::Train)
        } else if self.val.contains(&participant) {
            Some(SplitRole::Val)
        } else if self.test.contains(&participant) {
            Some(SplitRole::Test)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Train,
    Val,
    Test,
}

pub fn split_dataset(participant_ids: &[u32], layout: SplitLayout) -> Result<DatasetSplit> {
    let ids: BTreeSet<u32> = participant_ids.iter().copied().collect();
    if ids.len() != participant_ids.len() {
        return Err(Error::Split("duplicate participant id".into()));
    }
    match layout {
        SplitLayout::Paper => {
            let expected: BTreeSet<u32> = (1..=15).collect();
            if ids != expected {
                return Err(Error::Split("the fixed layout needs participants 1..=15".into()));
            }
            let val = BTreeSet::from([5]);
            let test = BTreeSet::from([8, 11, 15]);
            let train = (1..15).filter(|id| !val.contains(id) && !test.contains(id)).collect();
            DatasetSplit::new(train, val, test)
        }
        SplitLayout::Ratios { train, val, test } => {
            if ids.len() < 3 {
                return Err(Error::Split(format!("need at least 3 participants, got {}", ids.len())));
            }
            if [train, val, test].iter().any(|r| !(0.0..=1.0).contains(r)) || (train + val + test - 1.0).abs() > 1e-6 {
                return Err(Error::Split(format!("ratios ({train}, {val}, {test}) must be in [0,1] and sum to 1")));
            }
            let n = ids.len() as f64;
            let count = |r: f64| if r > 0.0 { ((n * r + 1e-9).floor() as usize).max(1) } else { 0 };
            let (n_val, n_test) = (count(val), count(test));
            let sorted: Vec<u32> = ids.into_iter().collect();
            let n_train = sorted.len() - n_val - n_test;
            DatasetSplit::new(
                sorted[..n_train].iter().copied().collect(),
                sorted[n_train..n_train + n_val].iter().copied().collect(),
                sorted[n_train + n_val..].iter().copied().collect(),
            )
        }
    }
}
