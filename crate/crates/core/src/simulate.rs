//! Online replay of an untrimmed trial: windowed prediction, debouncing,
//! streaming metrics and per-transition delays.

use std::path::Path;
use std::time::Instant;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::data::{ActionClass, LabelSource, LabelTrack, TrialRecording, WORKING_FPS};
use crate::encoder::{encode_window, make_windows, EncodedInput, EncoderConfig};
use crate::error::{Error, Result};
use crate::metrics::{OnlineCounts, OnlineSample, WeightMode};
use crate::models::{argmax, ClassifierModel};
use wmd_nn::Real;

/// Minimum time an accepted action must last before another is accepted.
pub const DEFAULT_MIN_DURATION_S: f64 = 2.0;
const DWELL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostProcessorState {
    pub current: Option<ActionClass>,
    pub dwell: f64,
    pub min_duration: f64,
}

impl PostProcessorState {
    pub fn new(min_duration: f64) -> Self {
        Self { current: None, dwell: 0.0, min_duration }
    }
}

impl Default for PostProcessorState {
    fn default() -> Self {
        Self::new(DEFAULT_MIN_DURATION_S)
    }
}

fn opposite_turns(a: ActionClass, b: ActionClass) -> bool {
    matches!((a, b), (ActionClass::TurnRight, ActionClass::TurnLeft) | (ActionClass::TurnLeft, ActionClass::TurnRight))
}

/// Debounces one raw prediction.
///
/// A change is accepted only once the current action has lasted
/// `min_duration`, and never directly between the two turn directions.
/// Rejected predictions leave the current action accumulating dwell time.
pub fn postprocess(state: &mut PostProcessorState, raw: ActionClass, dt: f64) -> ActionClass {
    let Some(current) = state.current else {
        state.current = Some(raw);
        state.dwell = 0.0;
        return raw;
    };
    if raw == current || state.dwell + DWELL_EPS < state.min_duration || opposite_turns(current, raw) {
        state.dwell += dt;
        return current;
    }
    state.current = Some(raw);
    state.dwell = 0.0;
    raw
}

/// Debounces a whole stream with a fixed step.
pub fn postprocess_stream(raw: &[ActionClass], dt: f64, min_duration: f64) -> Vec<ActionClass> {
    let mut state = PostProcessorState::new(min_duration);
    raw.iter().map(|&r| postprocess(&mut state, r, dt)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionDelay {
    pub gt_time: f64,
    pub class: ActionClass,
    /// `None` when the class never started inside the search interval.
    pub pred_time: Option<f64>,
    pub delay: Option<f64>,
}

impl TransitionDelay {
    pub fn missed(&self) -> bool {
        self.pred_time.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub transitions: Vec<TransitionDelay>,
}

/// Delay of each ground-truth onset (after the first) relative to the
/// post-processed trace.
///
/// For an onset of class `c` at `t_g`, the prediction time is the first
/// instant within `[previous onset, next onset)` at which the trace switches
/// to `c`. Counting switches rather than any sample labelled `c` keeps a
/// late-ending run of the same class (walk, turn, walk) from matching.
pub fn transition_delays(gt: &LabelTrack, times: &[f64], post: &[ActionClass]) -> Result<TransitionReport> {
    if times.len() != post.len() {
        return Err(Error::Shape(format!("{} times for {} labels", times.len(), post.len())));
    }
    let onsets = gt.transitions();
    let mut out = Vec::new();
    for k in 1..onsets.len() {
        let (lo, tg, class) = (onsets[k - 1].time, onsets[k].time, onsets[k].class);
        let hi = onsets.get(k + 1).map_or(f64::INFINITY, |o| o.time);
        let pred_time = (0..times.len())
            .filter(|&i| times[i] >= lo && times[i] < hi)
            .find(|&i| post[i] == class && (i == 0 || post[i - 1] != class))
            .map(|i| times[i]);
        out.push(TransitionDelay { gt_time: tg, class, pred_time, delay: pred_time.map(|p| p - tg) });
    }
    Ok(TransitionReport { transitions: out })
}

/// Source of raw per-window predictions.
pub trait WindowPredictor {
    /// Whether `predict` needs the encoded window (stubs may not).
    fn needs_input(&self) -> bool {
        true
    }

    fn predict(&mut self, step: usize, t: f64, input: Option<&EncodedInput>) -> Result<ActionClass>;
}

/// Replays a fixed label sequence, one entry per window.
#[derive(Debug, Clone)]
pub struct ScriptedPredictor {
    pub labels: Vec<ActionClass>,
}

impl WindowPredictor for ScriptedPredictor {
    fn needs_input(&self) -> bool {
        false
    }

    fn predict(&mut self, step: usize, _: f64, _: Option<&EncodedInput>) -> Result<ActionClass> {
        self.labels.get(step).copied().ok_or_else(|| Error::Data(format!("script has no label for window {step}")))
    }
}

/// Answers with the ground-truth label at the window end-time.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    pub labels: LabelTrack,
}

impl WindowPredictor for OraclePredictor {
    fn needs_input(&self) -> bool {
        false
    }

    fn predict(&mut self, _: usize, t: f64, _: Option<&EncodedInput>) -> Result<ActionClass> {
        self.labels.class_at(t).ok_or_else(|| Error::Data("empty label track".into()))
    }
}

/// The most probable class of a trained classifier.
impl<F: Real> WindowPredictor for ClassifierModel<F> {
    fn predict(&mut self, _: usize, _: f64, input: Option<&EncodedInput>) -> Result<ActionClass> {
        let input = input.ok_or_else(|| Error::Data("a model predictor needs the encoded window".into()))?;
        ActionClass::from_id(argmax(&self.predict_images(&[&input.image])?[0]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GtTrack {
    Merged,
    Joy,
    Vel,
}

impl std::str::FromStr for GtTrack {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "merged" => Ok(Self::Merged),
            "joy" => Ok(Self::Joy),
            "vel" => Ok(Self::Vel),
            _ => Err(Error::Config(format!("unknown label track `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub min_duration_s: f64,
    pub gt_track: GtTrack,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { min_duration_s: DEFAULT_MIN_DURATION_S, gt_track: GtTrack::Merged }
    }
}

/// Everything a simulated trial produces, aligned on window end-times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRun {
    pub times: Vec<f64>,
    pub raw: Vec<ActionClass>,
    pub post: Vec<ActionClass>,
    pub gt: Vec<ActionClass>,
    pub online: Vec<OnlineSample>,
    pub delays: TransitionReport,
    /// Wall-clock seconds spent per window (encode, predict, debounce).
    pub latencies_s: Vec<f64>,
}

impl SimulationRun {
    pub fn median_latency(&self) -> f64 {
        let mut v = self.latencies_s.clone();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        if v.len() % 2 == 1 {
            v[m]
        } else {
            (v[m - 1] + v[m]) / 2.0
        }
    }

    /// The run without timing measurements, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self { latencies_s: Vec::new(), ..self.clone() }
    }
}

fn gt_labels(trial: &TrialRecording, which: GtTrack) -> Result<LabelTrack> {
    Ok(match which {
        GtTrack::Merged => trial.merged_labels()?,
        GtTrack::Joy => trial.joy.clone(),
        GtTrack::Vel => trial.vel.clone(),
    })
}

/// Streams a trial through `predictor` window by window.
///
/// Trials recorded above the working rate are down-sampled first.
pub fn run_trial(
    trial: &TrialRecording,
    predictor: &mut dyn WindowPredictor,
    encoder: &EncoderConfig,
    cfg: &SimulationConfig,
) -> Result<SimulationRun> {
    let trial = if trial.fps > 1.5 * WORKING_FPS { trial.clone().downsampled() } else { trial.clone() };
    let labels = gt_labels(&trial, cfg.gt_track)?;
    let windows = make_windows(trial.frames.len(), encoder.window_len, encoder.stride)?;
    let dt = encoder.stride as f64 / trial.fps;
    let mut state = PostProcessorState::new(cfg.min_duration_s);
    let mut counts = OnlineCounts::new(ActionClass::COUNT, WeightMode::GroundTruth);
    let mut run = SimulationRun {
        times: Vec::new(),
        raw: Vec::new(),
        post: Vec::new(),
        gt: Vec::new(),
        online: Vec::new(),
        delays: TransitionReport { transitions: Vec::new() },
        latencies_s: Vec::new(),
    };
    for (step, window) in windows.iter().enumerate() {
        let t = trial.frames[window.last()].timestamp;
        let started = Instant::now();
        let input = if predictor.needs_input() { Some(encode_window(&trial.frames, *window, encoder)?) } else { None };
        let raw = predictor.predict(step, t, input.as_ref())?;
        let post = postprocess(&mut state, raw, dt);
        run.latencies_s.push(started.elapsed().as_secs_f64());
        let gt = labels.class_at(t).ok_or_else(|| Error::Data("empty label track".into()))?;
        run.online.push(counts.update(post.id(), gt.id(), t)?);
        run.times.push(t);
        run.raw.push(raw);
        run.post.push(post);
        run.gt.push(gt);
    }
    run.delays = transition_delays(&labels, &run.times, &run.post)?;
    Ok(run)
}

/// Label track whose onsets are the switch points of a per-window trace.
pub fn trace_to_track(times: &[f64], labels: &[ActionClass], source: LabelSource) -> Result<LabelTrack> {
    let mut tr = Vec::new();
    for (i, (&t, &c)) in times.iter().zip(labels).enumerate() {
        if i == 0 || labels[i - 1] != c {
            tr.push(crate::data::Transition { time: t, class: c });
        }
    }
    LabelTrack::new(source, tr)
}

/// Renders label traces (top) and online metric traces (bottom) to a PNG.
pub fn plot_run(path: &Path, run: &SimulationRun) -> Result<()> {
    let (w, h) = (800u32, 400u32);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let n = run.times.len().max(2);
    let x_of = |i: usize| ((i as f64 / (n - 1) as f64) * f64::from(w - 1)).round() as u32;
    let mut line = |series: &[f64], top: u32, height: u32, color: [u8; 3]| {
        let y_of = |v: f64| top + height - 1 - (v.clamp(0.0, 1.0) * f64::from(height - 1)).round() as u32;
        for i in 1..series.len() {
            let (x0, x1) = (x_of(i - 1), x_of(i));
            let (y0, y1) = (y_of(series[i - 1]), y_of(series[i]));
            for y in y0.min(y1)..=y0.max(y1) {
                img.put_pixel(x0, y, Rgb(color));
            }
            for x in x0..=x1 {
                img.put_pixel(x, y1, Rgb(color));
            }
        }
    };
    let scaled = |v: &[ActionClass]| v.iter().map(|c| c.id() as f64 / 3.0).collect::<Vec<_>>();
    line(&scaled(&run.gt), 10, 180, [0, 0, 0]);
    line(&scaled(&run.raw), 10, 180, [160, 160, 160]);
    line(&scaled(&run.post), 10, 180, [200, 30, 30]);
    let pick = |f: fn(&OnlineSample) -> f64| run.online.iter().map(f).collect::<Vec<_>>();
    line(&pick(|s| s.ia), 210, 180, [30, 30, 200]);
    line(&pick(|s| s.wia), 210, 180, [30, 160, 30]);
    line(&pick(|s| s.ip), 210, 180, [200, 120, 0]);
    line(&pick(|s| s.cip), 210, 180, [140, 0, 140]);
    img.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Transition;
    use ActionClass::*;

    const DT: f64 = 2.0 / 15.0;

    #[test]
    fn turn_accepted_once_dwell_reached() {
        let mut raw = vec![Walk; 20];
        raw.extend([TurnRight; 5]);
        let post = postprocess_stream(&raw, DT, 2.0);
        // dwell after frame k (0-based) is k*dt; 15 steps reach 2.0 s
        assert!(post[..20].iter().all(|&c| c == Walk));
        assert_eq!(post[20], TurnRight);

        let mut raw = vec![Walk; 10];
        raw.extend([TurnRight, TurnRight, Walk]);
        let post = postprocess_stream(&raw, DT, 2.0);
        assert!(post.iter().take(15).all(|&c| c == Walk));
        assert_eq!(post[10], Walk);
    }

    #[test]
    fn blip_is_suppressed() {
        let raw = [Walk, Walk, TurnRight, Walk, Walk];
        assert_eq!(postprocess_stream(&raw, DT, 2.0), vec![Walk; 5]);
    }

    #[test]
    fn opposite_turn_rejected_then_walk_accepted() {
        let mut s = PostProcessorState { current: Some(TurnRight), dwell: 3.0, min_duration: 2.0 };
        assert_eq!(postprocess(&mut s, TurnLeft, DT), TurnRight);
        assert!((s.dwell - 3.0 - DT).abs() < 1e-12);
        assert_eq!(postprocess(&mut s, Walk, DT), Walk);
        assert_eq!(s.dwell, 0.0);
    }

    fn track(items: &[(f64, ActionClass)]) -> LabelTrack {
        LabelTrack::new(LabelSource::Merged, items.iter().map(|&(time, class)| Transition { time, class }).collect()).unwrap()
    }

    #[test]
    fn delay_examples() {
        let times: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let gt = track(&[(0.0, Stop), (2.0, Walk), (6.0, Stop)]);
        let exact: Vec<_> = times.iter().map(|&t| gt.class_at(t).unwrap()).collect();
        let rep = transition_delays(&gt, &times, &exact).unwrap();
        assert!(rep.transitions.iter().all(|d| d.delay.unwrap().abs() < 1e-12));

        let late: Vec<_> = times.iter().map(|&t| if (2.0..2.2 - 1e-9).contains(&t) { Stop } else { gt.class_at(t).unwrap() }).collect();
        let rep = transition_delays(&gt, &times, &late).unwrap();
        assert!((rep.transitions[0].delay.unwrap() - 0.2).abs() < 1e-9);

        let never: Vec<_> = vec![Stop; times.len()];
        let rep = transition_delays(&gt, &times, &never).unwrap();
        assert!(rep.transitions[0].missed());
    }

    #[test]
    fn lingering_same_class_is_not_matched() {
        let times: Vec<f64> = (0..120).map(|i| i as f64 * 0.1).collect();
        let gt = track(&[(0.0, Walk), (4.0, TurnLeft), (8.0, Walk)]);
        let post: Vec<_> = times
            .iter()
            .map(|&t| if t < 4.5 { Walk } else if t < 8.3 { TurnLeft } else { Walk })
            .collect();
        let rep = transition_delays(&gt, &times, &post).unwrap();
        assert!((rep.transitions[0].delay.unwrap() - 0.5).abs() < 1e-9);
        assert!((rep.transitions[1].delay.unwrap() - 0.3).abs() < 1e-9);
    }

    #[test]
    fn oracle_run_matches_ground_truth() {
        use crate::data::{generate_synthetic_trial, SegmentSpec, SyntheticSceneConfig};
        let cfg = SyntheticSceneConfig {
            size: 32,
            noise_level: 0.0,
            script: Some(vec![
                SegmentSpec { class: Stop, seconds: 3.0 },
                SegmentSpec { class: Walk, seconds: 3.0 },
                SegmentSpec { class: TurnLeft, seconds: 3.0 },
            ]),
            ..Default::default()
        };
        let trial = generate_synthetic_trial(&cfg, 0).unwrap();
        let mut oracle = OraclePredictor { labels: trial.merged_labels().unwrap() };
        let run = run_trial(&trial, &mut oracle, &EncoderConfig::default(), &SimulationConfig::default()).unwrap();
        assert_eq!(run.post, run.gt);
        assert!(run.delays.transitions.iter().all(|d| d.delay.unwrap() >= 0.0 && d.delay.unwrap() <= DT + 1e-9));
    }
}
