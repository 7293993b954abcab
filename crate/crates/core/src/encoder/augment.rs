//! Training-time photometric and translation/zoom jitter. No rotations or
//! mirroring: a horizontal flip would swap the two turn classes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Additive brightness drawn from `[-brightness, brightness]`.
    pub brightness: f64,
    pub contrast: (f64, f64),
    /// Maximum shift as a fraction of the side.
    pub shift: f64,
    pub zoom: (f64, f64),
    pub blur_prob: f64,
    pub blur_sigma_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            brightness: 0.2,
            contrast: (0.8, 1.2),
            shift: 0.1,
            zoom: (0.9, 1.1),
            blur_prob: 0.5,
            blur_sigma_max: 1.5,
        }
    }
}

/// One concrete set of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub brightness: f32,
    pub contrast: f32,
    pub shift_x: f64,
    pub shift_y: f64,
    pub zoom: f64,
    pub blur_sigma: f64,
}

impl AugmentDraw {
    pub const IDENTITY: Self = Self { brightness: 0.0, contrast: 1.0, shift_x: 0.0, shift_y: 0.0, zoom: 1.0, blur_sigma: 0.0 };

    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        if !cfg.enabled {
            return Self::IDENTITY;
        }
        let mut uniform = |lo: f64, hi: f64| if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let brightness = uniform(-cfg.brightness, cfg.brightness) as f32;
        let contrast = uniform(cfg.contrast.0, cfg.contrast.1) as f32;
        let shift_x = uniform(-cfg.shift, cfg.shift);
        let shift_y = uniform(-cfg.shift, cfg.shift);
        let zoom = uniform(cfg.zoom.0, cfg.zoom.1);
        let blur = uniform(0.0, 1.0) < cfg.blur_prob;
        let sigma = uniform(0.0, cfg.blur_sigma_max);
        Self { brightness, contrast, shift_x, shift_y, zoom, blur_sigma: if blur { sigma } else { 0.0 } }
    }

    fn moves(&self) -> bool {
        self.shift_x != 0.0 || self.shift_y != 0.0 || self.zoom != 1.0
    }

    /// Shift and zoom about the centre, zero fill, bilinear sampling. Shifts
    /// are rounded to whole pixels, so a pure shift moves pixels exactly.
    pub fn warp(&self, image: &Image) -> Image {
        if !self.moves() {
            return image.clone();
        }
        let (h, w, c) = (image.height, image.width, image.channels);
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let (dy, dx) = ((self.shift_y * h as f64).round(), (self.shift_x * w as f64).round());
        let mut out = Image::zeros(h, w, c);
        for r in 0..h {
            let sy = (r as f64 - cy - dy) / self.zoom + cy;
            for q in 0..w {
                let sx = (q as f64 - cx - dx) / self.zoom + cx;
                for ch in 0..c {
                    let o = out.idx(r, q, ch);
                    out.data[o] = sample_zero(image, sy, sx, ch);
                }
            }
        }
        out
    }

    /// Applies the same shift and zoom to a mask, re-binarized at 0.5.
    pub fn warp_mask(&self, height: usize, width: usize, mask: &[bool]) -> Vec<bool> {
        if !self.moves() {
            return mask.to_vec();
        }
        self.warp(&Image::from_mask(height, width, mask)).binarize(0.5)
    }

    pub fn apply(&self, image: &Image) -> Image {
        let mut out = self.warp(image);
        if self.blur_sigma > 0.0 {
            out = gaussian_blur(&out, self.blur_sigma);
        }
        if self.brightness != 0.0 {
            out.data.iter_mut().for_each(|v| *v += self.brightness);
        }
        if self.contrast != 1.0 {
            let mean = out.mean();
            out.data.iter_mut().for_each(|v| *v = (*v - mean) * self.contrast + mean);
        }
        out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        out
    }
}

fn sample_zero(image: &Image, y: f64, x: f64, ch: usize) -> f32 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = ((y - y0) as f32, (x - x0) as f32);
    let at = |r: f64, q: f64| -> f32 {
        if r < 0.0 || q < 0.0 || r >= image.height as f64 || q >= image.width as f64 {
            0.0
        } else {
            image.get(r as usize, q as usize, ch)
        }
    };
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1.0) * fx;
    let bottom = at(y0 + 1.0, x0) * (1.0 - fx) + at(y0 + 1.0, x0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    let radius = (3.0 * sigma).ceil() as isize;
    if radius == 0 {
        return image.clone();
    }
    let mut kernel: Vec<f32> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32).collect();
    let total: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (h, w, c) = (image.height as isize, image.width as isize, image.channels);
    let pass = |src: &Image, horizontal: bool| {
        let mut out = Image::zeros(src.height, src.width, c);
        for r in 0..h {
            for q in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for (k, &wt) in kernel.iter().enumerate() {
                        let off = k as isize - radius;
                        let (rr, qq) = if horizontal { (r, (q + off).clamp(0, w - 1)) } else { ((r + off).clamp(0, h - 1), q) };
                        acc += wt * src.get(rr as usize, qq as usize, ch);
                    }
                    let o = out.idx(r as usize, q as usize, ch);
                    out.data[o] = acc;
                }
            }
        }
        out
    };
    pass(&pass(image, true), false)
}

/// Draws parameters from `rng` and applies them.
pub fn augment<R: Rng + ?Sized>(image: &Image, cfg: &AugmentConfig, rng: &mut R) -> Image {
    AugmentDraw::sample(cfg, rng).apply(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp() -> Image {
        Image::from_vec(16, 16, 3, (0..16 * 16 * 3).map(|i| (i % 97) as f32 / 96.0).collect()).unwrap()
    }

    #[test]
    fn identity_draw_returns_input() {
        let img = ramp();
        assert_eq!(AugmentDraw::IDENTITY.apply(&img), img);
        let off = AugmentConfig { enabled: false, ..Default::default() };
        assert_eq!(augment(&img, &off, &mut ChaCha8Rng::seed_from_u64(1)), img);
    }

    #[test]
    fn seeded_draws_repeat_and_stay_in_range() {
        let img = ramp();
        let cfg = AugmentConfig::default();
        for seed in 0..20 {
            let a = augment(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            let b = augment(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(a, b);
            assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn pure_shift_moves_content_without_mirroring() {
        let mut img = Image::zeros(8, 8, 1);
        img.data[2 * 8 + 1] = 1.0;
        let draw = AugmentDraw { shift_x: 0.25, ..AugmentDraw::IDENTITY };
        let out = draw.apply(&img);
        assert_eq!(out.get(2, 3, 0), 1.0);
        assert_eq!(out.data.iter().filter(|&&v| v > 0.0).count(), 1);
    }

    #[test]
    fn blur_preserves_constant_images() {
        let img = Image::from_vec(9, 9, 1, vec![0.4; 81]).unwrap();
        let out = gaussian_blur(&img, 1.2);
        assert!(out.data.iter().all(|v| (v - 0.4).abs() < 1e-6));
    }
}
