//! Deterministic RGB-D renderer standing in for real walker recordings.
//!
//! A scene is two rectangular legs joined by a pelvis bar, seen in front of a
//! striped wall and a tilted floor. Legs follow the joystick (intention)
//! timing and the background follows the velocity-command timing, so the two
//! label tracks differ by the configured lead.

use std::f64::consts::FRAC_PI_2;

use image::{Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ActionClass, Circuit, DepthImage, Frame, GaitSpeed, LabelSource, LabelTrack, TrialRecording, Transition};
use crate::error::{Error, Result};

pub const LEG_DEPTH_MM: u16 = 1200;
pub const WALL_DEPTH_MM: u16 = 3000;
pub const FLOOR_FAR_MM: f64 = 2450.0;
pub const FLOOR_NEAR_MM: f64 = 1500.0;

/// One scripted action and how long it lasts (before `duration_scale`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub class: ActionClass,
    pub seconds: f64,
}

/// Scene layout, in fractions of the frame side unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneGeometry {
    pub pelvis_top: f64,
    pub pelvis_height: f64,
    pub foot_row: f64,
    pub leg_width_min: f64,
    pub leg_width_max: f64,
    pub leg_gap: f64,
    /// Peak foot lift during a step.
    pub lift: f64,
    /// Peak vertical pelvis bob during a step; the feet stay planted.
    pub bob: f64,
    /// Sideways body shift held during a turn.
    pub turn_offset: f64,
    pub stripe_period: f64,
    pub stripe_contrast: u8,
    /// First floor row.
    pub floor_start: f64,
    /// Background flow, frame sides per metre walked.
    pub flow_per_m: f64,
    /// Horizontal shear rate during turns, frame sides per second.
    pub shear_rate: f64,
    /// Steps per metre walked.
    pub cadence_per_m: f64,
}

impl Default for SceneGeometry {
    fn default() -> Self {
        Self {
            pelvis_top: 0.12,
            pelvis_height: 0.07,
            foot_row: 0.92,
            leg_width_min: 0.06,
            leg_width_max: 0.10,
            leg_gap: 0.08,
            lift: 0.06,
            bob: 0.03,
            turn_offset: 0.05,
            stripe_period: 0.08,
            stripe_contrast: 28,
            floor_start: 0.6,
            flow_per_m: 0.25,
            shear_rate: 0.12,
            cadence_per_m: 1.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneConfig {
    pub participant_id: u32,
    pub gait_speed: f64,
    pub circuit: Circuit,
    pub repetition: u32,
    /// Relative noise level; RGB sigma is `noise_level * 255`, depth sigma
    /// `noise_level * 100` mm.
    pub noise_level: f64,
    pub size: u32,
    pub fps: f64,
    pub stand_s: f64,
    pub walk_m: f64,
    /// Multiplies every segment duration.
    pub duration_scale: f64,
    /// How far joystick onsets precede velocity onsets.
    pub joy_lead_s: f64,
    /// Replaces the circuit protocol when set.
    pub script: Option<Vec<SegmentSpec>>,
    pub geometry: SceneGeometry,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        Self {
            participant_id: 1,
            gait_speed: 0.7,
            circuit: Circuit::RightWide,
            repetition: 1,
            noise_level: 0.02,
            size: 480,
            fps: super::RECORDED_FPS,
            stand_s: 10.0,
            walk_m: 3.0,
            duration_scale: 1.0,
            joy_lead_s: 0.3,
            script: None,
            geometry: SceneGeometry::default(),
        }
    }
}

impl SyntheticSceneConfig {
    pub fn validate(&self) -> Result<GaitSpeed> {
        let speed = GaitSpeed::new(self.gait_speed)?;
        let g = &self.geometry;
        let checks = [
            (self.participant_id >= 1, "participant_id must be >= 1"),
            (self.noise_level >= 0.0 && self.noise_level.is_finite(), "noise_level must be >= 0"),
            (self.size >= 32, "size must be at least 32"),
            (self.fps > 0.0, "fps must be positive"),
            (self.duration_scale > 0.0, "duration_scale must be positive"),
            (self.joy_lead_s >= 0.0, "joy_lead_s must be >= 0"),
            (self.stand_s > 0.0 && self.walk_m > 0.0, "stand_s and walk_m must be positive"),
            (g.leg_width_min > 0.0 && g.leg_width_min <= g.leg_width_max, "leg width range is empty"),
            (g.floor_start > 0.0 && g.floor_start < 0.75, "floor_start must leave floor in the bottom quarter"),
            (g.pelvis_top + g.pelvis_height < g.foot_row && g.foot_row <= 1.0, "legs do not fit the frame"),
        ];
        if let Some((_, msg)) = checks.iter().find(|(ok, _)| !ok) {
            return Err(Error::Config((*msg).to_string()));
        }
        if let Some(script) = &self.script {
            if script.is_empty() || script.iter().any(|s| s.seconds <= 0.0) {
                return Err(Error::Config("script segments need positive durations".into()));
            }
            if script.windows(2).any(|w| w[0].class == w[1].class) {
                return Err(Error::Config("consecutive script segments repeat a class".into()));
            }
        }
        Ok(speed)
    }

    /// The five-part circuit: stand, walk, 90° turn, walk, stand.
    pub fn segments(&self) -> Vec<SegmentSpec> {
        let raw = self.script.clone().unwrap_or_else(|| {
            let v = self.gait_speed;
            let walk = self.walk_m / v;
            // the walker's turning arc, covered at half the straight-line speed
            let turn = FRAC_PI_2 * self.circuit.turn_radius_m() / (0.5 * v);
            vec![
                SegmentSpec { class: ActionClass::Stop, seconds: self.stand_s },
                SegmentSpec { class: ActionClass::Walk, seconds: walk },
                SegmentSpec { class: self.circuit.turn(), seconds: turn },
                SegmentSpec { class: ActionClass::Walk, seconds: walk },
                SegmentSpec { class: ActionClass::Stop, seconds: self.stand_s },
            ]
        });
        raw.into_iter().map(|s| SegmentSpec { seconds: s.seconds * self.duration_scale, ..s }).collect()
    }
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over the combined words
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A validated scene that renders any frame on demand.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    cfg: SyntheticSceneConfig,
    speed: GaitSpeed,
    seed: u64,
    onsets: Vec<(f64, ActionClass)>,
    duration: f64,
    leg_color: [f64; 3],
    leg_width: f64,
    gain: f64,
}

impl SyntheticScene {
    pub fn new(cfg: SyntheticSceneConfig, seed: u64) -> Result<Self> {
        let speed = cfg.validate()?;
        let mut onsets = Vec::new();
        let mut t = 0.0;
        for seg in cfg.segments() {
            onsets.push((t, seg.class));
            t += seg.seconds;
        }
        let mut person = ChaCha8Rng::seed_from_u64(mix(seed, u64::from(cfg.participant_id)));
        let leg_color = [person.gen_range(20.0..90.0), person.gen_range(20.0..90.0), person.gen_range(120.0..220.0)];
        let g = &cfg.geometry;
        let leg_width = if g.leg_width_max > g.leg_width_min {
            person.gen_range(g.leg_width_min..g.leg_width_max)
        } else {
            g.leg_width_min
        };
        let trial_key = mix(
            mix(seed, u64::from(cfg.participant_id) << 32 | u64::from(cfg.repetition)),
            (cfg.circuit as u64) << 8 | (cfg.gait_speed * 10.0).round() as u64,
        );
        let gain = ChaCha8Rng::seed_from_u64(trial_key).gen_range(0.85..1.15);
        Ok(Self { cfg, speed, seed: trial_key, onsets, duration: t, leg_color, leg_width, gain })
    }

    pub fn config(&self) -> &SyntheticSceneConfig {
        &self.cfg
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.cfg.fps).floor() as usize + 1
    }

    pub fn timestamp(&self, i: usize) -> f64 {
        i as f64 / self.cfg.fps
    }

    pub fn vel_track(&self) -> LabelTrack {
        let tr = self.onsets.iter().map(|&(time, class)| Transition { time, class }).collect();
        LabelTrack::new(LabelSource::Vel, tr).expect("script validated")
    }

    pub fn joy_track(&self) -> LabelTrack {
        let lead = self.cfg.joy_lead_s;
        let tr = self
            .onsets
            .iter()
            .enumerate()
            .map(|(i, &(time, class))| Transition { time: if i == 0 { time } else { (time - lead).max(0.0) }, class })
            .collect();
        LabelTrack::new(LabelSource::Joy, tr).expect("script validated")
    }

    fn class_at(track: &LabelTrack, t: f64) -> ActionClass {
        track.class_at(t).unwrap_or(ActionClass::Stop)
    }

    /// Background displacement (vertical flow, horizontal shear) in pixels,
    /// integrated over velocity-command time.
    fn background_offset(&self, t: f64) -> (f64, f64) {
        let s = f64::from(self.cfg.size);
        let g = &self.cfg.geometry;
        let v = self.speed.mps();
        let (mut flow, mut shear) = (0.0, 0.0);
        for (i, &(start, class)) in self.onsets.iter().enumerate() {
            if start >= t {
                break;
            }
            let end = self.onsets.get(i + 1).map_or(f64::INFINITY, |o| o.0).min(t);
            let dt = end - start;
            match class {
                ActionClass::Stop => {}
                ActionClass::Walk => flow += dt * v * g.flow_per_m * s,
                ActionClass::TurnRight | ActionClass::TurnLeft => {
                    let dir = if class == ActionClass::TurnRight { 1.0 } else { -1.0 };
                    flow += dt * 0.5 * v * g.flow_per_m * s;
                    shear += dir * dt * g.shear_rate * s;
                }
            }
        }
        (flow, shear)
    }

    /// Boolean leg/pelvis silhouette at time `t` (row-major, `size²`).
    pub fn leg_mask(&self, t: f64) -> Vec<bool> {
        let n = self.cfg.size as usize;
        let s = n as f64;
        let g = &self.cfg.geometry;
        let class = Self::class_at(&self.joy_track(), t);
        let moving = class != ActionClass::Stop;
        let phase = 2.0 * std::f64::consts::PI * g.cadence_per_m * self.speed.mps() * 0.5 * t;
        let lift = if moving { g.lift * s } else { 0.0 };
        let lifts = [(lift * phase.sin().max(0.0)).round(), (lift * (-phase.sin()).max(0.0)).round()];
        let shift = match class {
            ActionClass::TurnRight => (g.turn_offset * s).round(),
            ActionClass::TurnLeft => -(g.turn_offset * s).round(),
            _ => 0.0,
        };
        let width = (self.leg_width * s).round().max(1.0);
        let gap = (g.leg_gap * s).round();
        let left = ((s - 2.0 * width - gap) / 2.0).round() + shift;
        let bob = if moving { (g.bob * s * phase.sin().abs()).round() } else { 0.0 };
        let pelvis_top = (g.pelvis_top * s).round() + bob;
        let pelvis_bottom = (pelvis_top + (g.pelvis_height * s).round()).max(pelvis_top + 1.0);
        let foot = (g.foot_row * s).round();

        let mut mask = vec![false; n * n];
        let mut fill = |r0: f64, r1: f64, c0: f64, c1: f64| {
            let clamp = |v: f64| v.clamp(0.0, s) as usize;
            for r in clamp(r0)..clamp(r1) {
                mask[r * n + clamp(c0)..r * n + clamp(c1)].fill(true);
            }
        };
        fill(pelvis_top, pelvis_bottom, left, left + 2.0 * width + gap);
        fill(pelvis_bottom, foot - lifts[0], left, left + width);
        fill(pelvis_bottom, foot - lifts[1], left + width + gap, left + 2.0 * width + gap);
        mask
    }

    /// Noise-free rendering of frame `i`.
    pub fn render_clean(&self, i: usize) -> (RgbImage, DepthImage, Vec<bool>) {
        let t = self.timestamp(i);
        let n = self.cfg.size;
        let s = f64::from(n);
        let g = &self.cfg.geometry;
        let legs = self.leg_mask(t);
        let (flow, shear) = self.background_offset(t);
        let period = (g.stripe_period * s).max(2.0);
        let floor_row = (g.floor_start * s).round() as u32;
        let contrast = f64::from(g.stripe_contrast);
        let mut rgb = RgbImage::new(n, n);
        let mut depth = DepthImage::new(n, n);
        for r in 0..n {
            let rf = f64::from(r);
            let row_shear = shear * (0.5 + rf / s);
            let h = ((rf - flow) / period).floor() as i64;
            let on_floor = r >= floor_row;
            let base = if on_floor { [96.0, 90.0, 84.0] } else { [120.0, 122.0, 128.0] };
            let floor_depth = if on_floor {
                let span = f64::from(n - 1 - floor_row).max(1.0);
                FLOOR_FAR_MM + (FLOOR_NEAR_MM - FLOOR_FAR_MM) * f64::from(r - floor_row) / span
            } else {
                f64::from(WALL_DEPTH_MM)
            };
            for c in 0..n {
                let idx = (r * n + c) as usize;
                let (color, d) = if legs[idx] {
                    (self.leg_color, f64::from(LEG_DEPTH_MM))
                } else {
                    let v = ((f64::from(c) - row_shear) / period).floor() as i64;
                    let lit = (h + v).rem_euclid(2) as f64;
                    (base.map(|b| b + contrast * lit), floor_depth)
                };
                rgb.put_pixel(c, r, Rgb(color.map(|v| (v * self.gain).round().clamp(0.0, 255.0) as u8)));
                depth.put_pixel(c, r, Luma([d.round() as u16]));
            }
        }
        (rgb, depth, legs)
    }

    /// Frame `i` with sensor noise; noise depends only on the seed and `i`.
    pub fn render(&self, i: usize) -> Frame {
        let (mut rgb, mut depth, _) = self.render_clean(i);
        let noise = self.cfg.noise_level;
        if noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, i as u64 + 1));
            let color = Normal::new(0.0, noise * 255.0).expect("finite sigma");
            let range = Normal::new(0.0, noise * 100.0).expect("finite sigma");
            for px in rgb.pixels_mut() {
                for ch in px.0.iter_mut() {
                    *ch = (f64::from(*ch) + color.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
                }
            }
            for px in depth.pixels_mut() {
                px.0[0] = (f64::from(px.0[0]) + range.sample(&mut rng)).round().clamp(0.0, 65535.0) as u16;
            }
        }
        Frame { rgb, depth, timestamp: self.timestamp(i) }
    }

    pub fn into_recording(self) -> TrialRecording {
        let frames = (0..self.frame_count()).map(|i| self.render(i)).collect();
        TrialRecording {
            participant_id: self.cfg.participant_id,
            gait_speed: self.speed,
            circuit: self.cfg.circuit,
            repetition: self.cfg.repetition,
            fps: self.cfg.fps,
            frames,
            joy: self.joy_track(),
            vel: self.vel_track(),
        }
    }
}

/// Renders a whole trial in memory.
pub fn generate_synthetic_trial(config: &SyntheticSceneConfig, seed: u64) -> Result<TrialRecording> {
    Ok(SyntheticScene::new(config.clone(), seed)?.into_recording())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(script: Option<Vec<SegmentSpec>>, noise: f64) -> SyntheticSceneConfig {
        SyntheticSceneConfig { size: 64, noise_level: noise, duration_scale: 0.1, script, ..Default::default() }
    }

    #[test]
    fn same_seed_same_trial() {
        let cfg = small(None, 0.05);
        let a = generate_synthetic_trial(&cfg, 9).unwrap();
        let b = generate_synthetic_trial(&cfg, 9).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.joy, b.joy);
        let c = generate_synthetic_trial(&cfg, 10).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn stop_only_frames_are_static_without_noise() {
        let cfg = small(Some(vec![SegmentSpec { class: ActionClass::Stop, seconds: 10.0 }]), 0.0);
        let trial = generate_synthetic_trial(&cfg, 1).unwrap();
        assert!(trial.frames.len() > 10);
        for pair in trial.frames.windows(2) {
            assert_eq!(pair[0].rgb, pair[1].rgb);
            assert_eq!(pair[0].depth, pair[1].depth);
        }
    }

    #[test]
    fn invalid_speed_is_a_config_error() {
        let cfg = SyntheticSceneConfig { gait_speed: 0.6, ..small(None, 0.0) };
        assert!(matches!(generate_synthetic_trial(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn circuit_has_five_segments_and_joy_leads() {
        let scene = SyntheticScene::new(SyntheticSceneConfig { circuit: Circuit::LeftTight, ..small(None, 0.0) }, 3).unwrap();
        let vel = scene.vel_track();
        let joy = scene.joy_track();
        let classes: Vec<_> = vel.transitions().iter().map(|t| t.class).collect();
        use ActionClass::*;
        assert_eq!(classes, vec![Stop, Walk, TurnLeft, Walk, Stop]);
        for (j, v) in joy.transitions().iter().zip(vel.transitions()).skip(1) {
            assert!((v.time - j.time - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn legs_form_one_block_in_every_state() {
        let scene = SyntheticScene::new(small(None, 0.0), 4).unwrap();
        for i in (0..scene.frame_count()).step_by(7) {
            let legs = scene.leg_mask(scene.timestamp(i));
            let count = legs.iter().filter(|&&b| b).count();
            assert!(count > 0);
            let frac = count as f64 / legs.len() as f64;
            assert!((0.02..0.40).contains(&frac), "fraction {frac}");
        }
    }
}
