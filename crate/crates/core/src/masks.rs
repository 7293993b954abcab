//! Lower-body masks from depth: band threshold, floor-plane removal, largest
//! component and morphological clean-up, then per-window composition.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DepthImage;
use crate::encoder::{GeometryTransform, InputForm};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskConfig {
    pub depth_min_mm: u16,
    pub depth_max_mm: u16,
    /// Bottom fraction of rows used to fit the floor plane.
    pub floor_rows: f64,
    pub floor_tolerance_mm: f64,
    /// Fits flatter than this (mm per row, towards the camera) are not a floor.
    pub floor_min_slope: f64,
    pub close_size: usize,
    pub repair_close_size: usize,
    pub min_fraction: f64,
    pub max_fraction: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            depth_min_mm: 300,
            depth_max_mm: 2500,
            floor_rows: 0.25,
            floor_tolerance_mm: 50.0,
            floor_min_slope: 0.5,
            close_size: 5,
            repair_close_size: 7,
            min_fraction: 0.02,
            max_fraction: 0.40,
        }
    }
}

/// Row-major binary grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![false; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!("{} cells for a {width}x{height} mask", data.len())));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.data[row * self.width + col] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.data.len() as f64
        }
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn contains(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| a || !b)
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::Shape("mask sizes differ".into()));
        }
        Ok(Mask { data: self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect(), ..self.clone() })
    }
}

/// Straight-line least squares `y ≈ a·x + b`.
fn fit_line(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let sxx: f64 = points.iter().map(|&(x, _)| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
    let a = sxy / sxx;
    Some((a, my - a * mx))
}

fn median(values: &mut [u16]) -> f64 {
    values.sort_unstable();
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        f64::from(values[m])
    } else {
        (f64::from(values[m - 1]) + f64::from(values[m])) / 2.0
    }
}

/// Floor plane as `depth ≈ a·row + b`, when the bottom rows look like one.
pub fn fit_floor(depth: &DepthImage, cfg: &MaskConfig) -> Option<(f64, f64)> {
    let (w, h) = depth.dimensions();
    let first = h - ((f64::from(h) * cfg.floor_rows).round() as u32).clamp(2, h);
    let mut points = Vec::new();
    let mut row_vals = Vec::with_capacity(w as usize);
    for r in first..h {
        row_vals.clear();
        row_vals.extend((0..w).map(|c| depth.get_pixel(c, r).0[0]).filter(|&d| d >= cfg.depth_min_mm && d <= cfg.depth_max_mm));
        if row_vals.len() * 2 > w as usize {
            points.push((f64::from(r), median(&mut row_vals)));
        }
    }
    let (a, b) = fit_line(&points)?;
    (a <= -cfg.floor_min_slope).then_some((a, b))
}

/// Foreground person mask from a depth image; empty when nothing qualifies.
pub fn segment_person_depth(depth: &DepthImage, cfg: &MaskConfig) -> Mask {
    let (w, h) = depth.dimensions();
    let floor = fit_floor(depth, cfg);
    let mut mask = Mask::new(w as usize, h as usize);
    for (c, r, px) in depth.enumerate_pixels() {
        let d = px.0[0];
        let mut keep = d >= cfg.depth_min_mm && d <= cfg.depth_max_mm;
        if let (true, Some((a, b))) = (keep, floor) {
            keep = (f64::from(d) - (a * f64::from(r) + b)).abs() > cfg.floor_tolerance_mm;
        }
        mask.set(r as usize, c as usize, keep);
    }
    let largest = largest_component(&mask);
    close(&largest, cfg.close_size)
}

/// Keeps the largest 8-connected foreground component (first in scan order
/// on ties).
pub fn largest_component(mask: &Mask) -> Mask {
    let (w, h) = (mask.width, mask.height);
    let mut label = vec![0u32; w * h];
    let mut best = (0usize, 0u32);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.data[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    let j = rr as usize * w + cc as usize;
                    if mask.data[j] && label[j] == 0 {
                        label[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
        if size > best.0 {
            best = (size, next);
        }
    }
    Mask { data: label.iter().map(|&l| l != 0 && l == best.1).collect(), width: w, height: h }
}

/// Square-element max (dilate) or min (erode) filter; cells beyond the border
/// read as `outside`.
fn square_filter(mask: &Mask, size: usize, dilate: bool, outside: bool) -> Mask {
    let r = (size / 2) as isize;
    let (w, h) = (mask.width as isize, mask.height as isize);
    let pass = |src: &[bool], horizontal: bool| -> Vec<bool> {
        let mut out = vec![false; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = !dilate;
                for k in -r..=r {
                    let (yy, xx) = if horizontal { (y, x + k) } else { (y + k, x) };
                    let v = if yy < 0 || xx < 0 || yy >= h || xx >= w { outside } else { src[(yy * w + xx) as usize] };
                    if dilate { acc |= v } else { acc &= v }
                }
                out[(y * w + x) as usize] = acc;
            }
        }
        out
    };
    let data = pass(&pass(&mask.data, true), false);
    Mask { data, ..mask.clone() }
}

pub fn dilate(mask: &Mask, size: usize) -> Mask {
    square_filter(mask, size, true, false)
}

pub fn erode(mask: &Mask, size: usize) -> Mask {
    square_filter(mask, size, false, true)
}

/// Morphological closing with a `size x size` square; never removes pixels.
pub fn close(mask: &Mask, size: usize) -> Mask {
    if size <= 1 {
        return mask.clone();
    }
    erode(&dilate(mask, size), size)
}

/// Fills background regions not 4-connected to the border.
pub fn fill_holes(mask: &Mask) -> Mask {
    let (w, h) = (mask.width, mask.height);
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    for i in 0..w * h {
        let (r, c) = (i / w, i % w);
        if (r == 0 || c == 0 || r == h - 1 || c == w - 1) && !mask.data[i] {
            outside[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (r, c) = (i / w, i % w);
        let mut visit = |j: usize| {
            if !mask.data[j] && !outside[j] {
                outside[j] = true;
                queue.push_back(j);
            }
        };
        if r > 0 {
            visit(i - w);
        }
        if r + 1 < h {
            visit(i + w);
        }
        if c > 0 {
            visit(i - 1);
        }
        if c + 1 < w {
            visit(i + 1);
        }
    }
    Mask { data: outside.iter().map(|&o| !o).collect(), width: w, height: h }
}

pub fn detect_corruption(mask: &Mask, cfg: &MaskConfig) -> bool {
    let f = mask.fraction();
    !(cfg.min_fraction..=cfg.max_fraction).contains(&f)
}

/// Hole filling followed by one closing pass.
pub fn repair_mask(mask: &Mask, cfg: &MaskConfig) -> Mask {
    close(&fill_holes(mask), cfg.repair_close_size)
}

/// Per-frame result of the depth pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMask {
    pub mask: Mask,
    pub corrupted: bool,
}

pub fn frame_mask(depth: &DepthImage, cfg: &MaskConfig) -> FrameMask {
    let raw = segment_person_depth(depth, cfg);
    if detect_corruption(&raw, cfg) {
        FrameMask { mask: raw, corrupted: true }
    } else {
        FrameMask { mask: repair_mask(&raw, cfg), corrupted: false }
    }
}

/// A window's mask on the model input grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HumanMask {
    pub size: usize,
    pub mask: Vec<bool>,
    pub corrupted: bool,
    pub source_window: usize,
}

impl HumanMask {
    pub fn fraction(&self) -> f64 {
        self.mask.iter().filter(|&&b| b).count() as f64 / self.mask.len().max(1) as f64
    }
}

/// Union of the masks that shaped the encoded image (first and last for DIF,
/// all for ADD), mapped through the input's geometry.
pub fn composite_window_mask(
    members: &[&FrameMask],
    form: InputForm,
    geometry: &GeometryTransform,
    source_window: usize,
) -> Result<HumanMask> {
    let first = members.first().ok_or(Error::Window { required: 1, got: 0 })?;
    if members.iter().any(|m| m.corrupted) {
        return Err(Error::CorruptedWindow { start: source_window });
    }
    let picked: Vec<&Mask> = match form {
        InputForm::Dif => vec![&first.mask, &members[members.len() - 1].mask],
        InputForm::Add => members.iter().map(|m| &m.mask).collect(),
    };
    let mut union = picked[0].clone();
    for m in &picked[1..] {
        union = union.union(m)?;
    }
    let mask = geometry.apply_mask(union.height, union.width, &union.data)?;
    Ok(HumanMask { size: geometry.target, mask, corrupted: false, source_window })
}

/// Writes a 1-bit grayscale PNG.
pub fn write_mask_png(path: &Path, width: usize, height: usize, data: &[bool]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::One);
    let stride = width.div_ceil(8);
    let mut packed = vec![0u8; stride * height];
    for (i, &b) in data.iter().enumerate() {
        if b {
            let (r, c) = (i / width, i % width);
            packed[r * stride + c / 8] |= 0x80 >> (c % 8);
        }
    }
    let to_err = |e: png::EncodingError| Error::Data(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(to_err)?;
    writer.write_image_data(&packed).map_err(to_err)?;
    writer.finish().map_err(to_err)
}

pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let to_err = |e: png::DecodingError| Error::Data(format!("{}: {e}", path.display()));
    let mut reader = decoder.read_info().map_err(to_err)?;
    let info = reader.info().clone();
    if info.bit_depth != png::BitDepth::One || info.color_type != png::ColorType::Grayscale {
        return Err(Error::Data(format!("{}: not a 1-bit mask", path.display())));
    }
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| Error::Data("mask too large".into()))?];
    reader.next_frame(&mut buf).map_err(to_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = w.div_ceil(8);
    let data = (0..w * h).map(|i| buf[(i / w) * stride + (i % w) / 8] & (0x80 >> (i % w % 8)) != 0).collect();
    Mask::from_vec(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;

    fn rect(w: usize, h: usize, r0: usize, r1: usize, c0: usize, c1: usize) -> Mask {
        let mut m = Mask::new(w, h);
        for r in r0..r1 {
            for c in c0..c1 {
                m.set(r, c, true);
            }
        }
        m
    }

    #[test]
    fn uniform_far_depth_is_empty() {
        let depth = DepthImage::from_pixel(40, 40, Luma([3000]));
        assert!(segment_person_depth(&depth, &MaskConfig::default()).is_empty());
    }

    #[test]
    fn uniform_near_depth_is_full_frame() {
        let depth = DepthImage::from_pixel(40, 40, Luma([1000]));
        let m = segment_person_depth(&depth, &MaskConfig::default());
        assert_eq!(m.count(), 1600);
    }

    #[test]
    fn invalid_depth_is_empty() {
        let depth = DepthImage::new(20, 20);
        assert!(segment_person_depth(&depth, &MaskConfig::default()).is_empty());
    }

    #[test]
    fn corruption_band() {
        let cfg = MaskConfig::default();
        assert!(detect_corruption(&Mask::new(10, 10), &cfg));
        assert!(!detect_corruption(&rect(10, 10, 0, 1, 0, 10), &cfg));
        assert!(detect_corruption(&rect(10, 10, 0, 5, 0, 10), &cfg));
    }

    #[test]
    fn repair_fills_holes_and_notches() {
        let cfg = MaskConfig::default();
        let mut holed = rect(30, 30, 5, 25, 5, 25);
        holed.set(15, 15, false);
        holed.set(15, 16, false);
        let fixed = repair_mask(&holed, &cfg);
        assert!(fixed.get(15, 15) && fixed.get(15, 16));
        assert!(fixed.contains(&holed));

        let solid = rect(30, 30, 5, 25, 5, 25);
        assert_eq!(repair_mask(&solid, &cfg), solid);

        // a 5-pixel notch cut into the bottom edge
        let mut notched = rect(40, 40, 5, 30, 10, 30);
        for r in 25..30 {
            for c in 18..23 {
                notched.set(r, c, false);
            }
        }
        assert_eq!(repair_mask(&notched, &cfg), rect(40, 40, 5, 30, 10, 30));
    }

    #[test]
    fn largest_component_uses_diagonals() {
        let mut m = rect(10, 10, 0, 2, 0, 2);
        m.set(2, 2, true);
        m.set(3, 3, true);
        m = m.union(&rect(10, 10, 8, 10, 8, 10)).unwrap();
        let l = largest_component(&m);
        assert_eq!(l.count(), 6);
        assert!(!l.get(9, 9));
    }

    #[test]
    fn composite_union_rules() {
        let a = FrameMask { mask: rect(20, 20, 0, 4, 0, 4), corrupted: false };
        let b = FrameMask { mask: rect(20, 20, 10, 14, 10, 14), corrupted: false };
        let geo = GeometryTransform { roi: None, target: 20 };
        let dif = composite_window_mask(&[&a, &a, &a, &b], InputForm::Dif, &geo, 0).unwrap();
        assert_eq!(dif.mask.iter().filter(|&&v| v).count(), 32);
        let add = composite_window_mask(&[&a, &a, &a, &a], InputForm::Add, &geo, 0).unwrap();
        assert_eq!(add.mask, a.mask.data);
        let bad = FrameMask { corrupted: true, ..a.clone() };
        assert!(matches!(
            composite_window_mask(&[&a, &bad, &a, &a], InputForm::Add, &geo, 6),
            Err(Error::CorruptedWindow { start: 6 })
        ));
    }

    #[test]
    fn png_round_trip() {
        let m = rect(13, 7, 1, 5, 2, 11);
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("m.png");
        write_mask_png(&path, m.width, m.height, &m.data).unwrap();
        assert_eq!(read_mask_png(&path).unwrap(), m);
    }
}
