//! Single-image encodings of short frame windows (DIF and ADD), region of
//! interest cropping and aspect-preserving resize with padding.

mod augment;
mod cache;

use serde::{Deserialize, Serialize};

use crate::data::{ActionClass, Frame};
use crate::error::{Error, Result};

pub use augment::{augment, AugmentConfig, AugmentDraw};
pub use cache::{decode_tensor, encode_tensor, read_tensor, write_tensor, TENSOR_MAGIC};

pub const DEFAULT_WINDOW_LEN: usize = 4;
pub const DEFAULT_STRIDE: usize = 2;
pub const DEFAULT_INPUT_SIZE: usize = 224;

/// Dense real image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!("{} values for a {height}x{width}x{channels} image", data.len())));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn from_mask(height: usize, width: usize, mask: &[bool]) -> Self {
        Self { height, width, channels: 1, data: mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect() }
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[self.idx(row, col, ch)]
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f32 {
        if self.data.is_empty() {
            return 0.0;
        }
        (self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64) as f32
    }

    /// Threshold a single-channel image into a mask.
    pub fn binarize(&self, threshold: f32) -> Vec<bool> {
        self.data.iter().map(|&v| v >= threshold).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputForm {
    Dif,
    Add,
}

impl InputForm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Dif => "dif",
            Self::Add => "add",
        }
    }
}

impl std::str::FromStr for InputForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dif" => Ok(Self::Dif),
            "add" => Ok(Self::Add),
            _ => Err(Error::Config(format!("unknown input form `{s}` (expected dif or add)"))),
        }
    }
}

/// A run of consecutive frames at the working rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub len: usize,
}

impl Window {
    /// Index of the last frame.
    pub fn last(&self) -> usize {
        self.start + self.len - 1
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }

    pub fn duration(&self, fps: f64) -> f64 {
        self.len as f64 / fps
    }

    /// The window whose last frame is `last`.
    pub fn ending_at(last: usize, len: usize) -> Option<Self> {
        (last + 1).checked_sub(len).map(|start| Self { start, len })
    }
}

/// Windows starting at 0, `stride`, `2*stride`, ...; a trailing partial window
/// is dropped.
pub fn make_windows(frame_count: usize, len: usize, stride: usize) -> Result<Vec<Window>> {
    if len == 0 || stride == 0 {
        return Err(Error::Config("window length and stride must be positive".into()));
    }
    if frame_count < len {
        return Err(Error::Window { required: len, got: frame_count });
    }
    Ok((0..=frame_count - len).step_by(stride).map(|start| Window { start, len }).collect())
}

/// Pixel bounds, half-open in both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiSpec {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl RoiSpec {
    pub fn full(width: usize, height: usize) -> Self {
        Self { x0: 0, x1: width, y0: 0, y1: height }
    }

    /// Central 60% of the columns, all rows.
    pub fn central(width: usize, height: usize) -> Self {
        Self { x0: width / 5, x1: width * 4 / 5, y0: 0, y1: height }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn check(&self, width: usize, height: usize) -> Result<()> {
        if self.x0 < self.x1 && self.x1 <= width && self.y0 < self.y1 && self.y1 <= height {
            Ok(())
        } else {
            Err(Error::Roi(format!("x [{}, {}) y [{}, {}) on {width}x{height}", self.x0, self.x1, self.y0, self.y1)))
        }
    }
}

pub fn crop_roi(image: &Image, roi: RoiSpec) -> Result<Image> {
    roi.check(image.width, image.height)?;
    let c = image.channels;
    let mut data = Vec::with_capacity(roi.width() * roi.height() * c);
    for r in roi.y0..roi.y1 {
        let a = image.idx(r, roi.x0, 0);
        data.extend_from_slice(&image.data[a..a + roi.width() * c]);
    }
    Image::from_vec(roi.height(), roi.width(), c, data)
}

/// Content size and padding that `resize_pad` uses for an `h x w` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PadLayout {
    pub content_h: usize,
    pub content_w: usize,
    pub top: usize,
    pub left: usize,
}

pub fn pad_layout(height: usize, width: usize, target: usize) -> PadLayout {
    let longest = height.max(width) as f64;
    let scaled = |d: usize| ((d as f64 * target as f64 / longest).round() as usize).clamp(1, target);
    let (content_h, content_w) = (scaled(height), scaled(width));
    PadLayout { content_h, content_w, top: (target - content_h) / 2, left: (target - content_w) / 2 }
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize_bilinear(image: &Image, out_h: usize, out_w: usize) -> Image {
    if out_h == image.height && out_w == image.width {
        return image.clone();
    }
    let c = image.channels;
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (src - i0 as f64) as f32)
            })
            .collect()
    };
    let rows = axis(out_h, image.height);
    let cols = axis(out_w, image.width);
    let mut out = Image::zeros(out_h, out_w, c);
    for (r, &(r0, r1, fy)) in rows.iter().enumerate() {
        for (q, &(c0, c1, fx)) in cols.iter().enumerate() {
            for ch in 0..c {
                let top = image.get(r0, c0, ch) * (1.0 - fx) + image.get(r0, c1, ch) * fx;
                let bottom = image.get(r1, c0, ch) * (1.0 - fx) + image.get(r1, c1, ch) * fx;
                let o = out.idx(r, q, ch);
                out.data[o] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

/// Scales the longer side to `target` and centres the result on a zero
/// square canvas.
pub fn resize_pad(image: &Image, target: usize) -> Result<Image> {
    if image.is_empty() || target == 0 {
        return Err(Error::Shape("cannot resize an empty image".into()));
    }
    let layout = pad_layout(image.height, image.width, target);
    let content = resize_bilinear(image, layout.content_h, layout.content_w);
    if layout.content_h == target && layout.content_w == target {
        return Ok(content);
    }
    let c = image.channels;
    let mut out = Image::zeros(target, target, c);
    for r in 0..layout.content_h {
        let dst = out.idx(r + layout.top, layout.left, 0);
        let src = content.idx(r, 0, 0);
        out.data[dst..dst + layout.content_w * c].copy_from_slice(&content.data[src..src + layout.content_w * c]);
    }
    Ok(out)
}

/// Crop and resize shared by an encoded input and its mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeometryTransform {
    pub roi: Option<RoiSpec>,
    pub target: usize,
}

impl GeometryTransform {
    pub fn apply(&self, image: &Image) -> Result<Image> {
        match self.roi {
            Some(roi) => resize_pad(&crop_roi(image, roi)?, self.target),
            None => resize_pad(image, self.target),
        }
    }

    /// Transforms a full-frame mask and re-binarizes it at 0.5.
    pub fn apply_mask(&self, height: usize, width: usize, mask: &[bool]) -> Result<Vec<bool>> {
        Ok(self.apply(&Image::from_mask(height, width, mask))?.binarize(0.5))
    }
}

/// Per-pixel `(last - first + 255) / 510` on the frames' RGB within `roi`.
///
/// Negative differences are computed as `1 - f(-d)`, so swapping the first
/// and last frame maps every value `x` to exactly `1 - x` in `f32`.
pub fn encode_dif(frames: &[&Frame], roi: RoiSpec) -> Result<Image> {
    check_window(frames, roi)?;
    let (first, last) = (&frames[0].rgb, &frames[frames.len() - 1].rgb);
    let up = |d: f32| (d + 255.0) / 510.0;
    Ok(encode_with(roi, 3, |x, y, ch| {
        let d = f32::from(last.get_pixel(x, y).0[ch]) - f32::from(first.get_pixel(x, y).0[ch]);
        if d >= 0.0 {
            up(d)
        } else {
            1.0 - up(-d)
        }
    }))
}

/// Per-pixel mean of the frames' RGB divided by 255, within `roi`.
pub fn encode_add(frames: &[&Frame], roi: RoiSpec) -> Result<Image> {
    check_window(frames, roi)?;
    let n = frames.len() as f32;
    Ok(encode_with(roi, 3, |x, y, ch| {
        let sum: u32 = frames.iter().map(|f| u32::from(f.rgb.get_pixel(x, y).0[ch])).sum();
        sum as f32 / n / 255.0
    }))
}

fn encode_with(roi: RoiSpec, channels: usize, f: impl Fn(u32, u32, usize) -> f32) -> Image {
    let mut out = Image::zeros(roi.height(), roi.width(), channels);
    let mut i = 0;
    for y in roi.y0..roi.y1 {
        for x in roi.x0..roi.x1 {
            for ch in 0..channels {
                out.data[i] = f(x as u32, y as u32, ch);
                i += 1;
            }
        }
    }
    out
}

fn check_window(frames: &[&Frame], roi: RoiSpec) -> Result<()> {
    let first = frames.first().ok_or(Error::Window { required: 1, got: 0 })?;
    let dims = first.rgb.dimensions();
    if let Some(bad) = frames.iter().find(|f| f.rgb.dimensions() != dims) {
        return Err(Error::Shape(format!("window mixes frame sizes {dims:?} and {:?}", bad.rgb.dimensions())));
    }
    roi.check(dims.0 as usize, dims.1 as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub form: InputForm,
    pub crop: bool,
    /// Crop bounds; the central 60% of columns when unset.
    pub roi: Option<RoiSpec>,
    pub window_len: usize,
    pub stride: usize,
    pub input_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            form: InputForm::Add,
            crop: true,
            roi: None,
            window_len: DEFAULT_WINDOW_LEN,
            stride: DEFAULT_STRIDE,
            input_size: DEFAULT_INPUT_SIZE,
        }
    }
}

impl EncoderConfig {
    /// Pixel region read from frames of the given size.
    pub fn source_roi(&self, width: usize, height: usize) -> RoiSpec {
        if self.crop {
            self.roi.unwrap_or_else(|| RoiSpec::central(width, height))
        } else {
            RoiSpec::full(width, height)
        }
    }

    /// Maps a full-frame grid (such as a mask) onto the model input grid the
    /// same way `encode_window` maps frames.
    pub fn geometry(&self, width: usize, height: usize) -> GeometryTransform {
        GeometryTransform { roi: Some(self.source_roi(width, height)), target: self.input_size }
    }
}

/// One model-ready input with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedInput {
    pub image: Image,
    pub form: InputForm,
    pub cropped: bool,
    pub window: Window,
    pub class: Option<ActionClass>,
}

/// Encodes `window` of `frames` and brings it to the model input size.
pub fn encode_window(frames: &[Frame], window: Window, cfg: &EncoderConfig) -> Result<EncodedInput> {
    if window.start + window.len > frames.len() {
        return Err(Error::Window { required: window.start + window.len, got: frames.len() });
    }
    let members: Vec<&Frame> = frames[window.indices()].iter().collect();
    let (w, h) = members[0].rgb.dimensions();
    let roi = cfg.source_roi(w as usize, h as usize);
    let raw = match cfg.form {
        InputForm::Dif => encode_dif(&members, roi)?,
        InputForm::Add => encode_add(&members, roi)?,
    };
    Ok(EncodedInput { image: resize_pad(&raw, cfg.input_size)?, form: cfg.form, cropped: cfg.crop, window, class: None })
}
