//! Train/eval image transforms. Images arrive as HWC floats in `[0, 1]` and
//! leave as CHW `f64` tensors normalized per channel.

use ndarray::{Array3, Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::error::{Error, Result};

pub const IMAGENET_MEANS: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STDS: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub train_crop_size: usize,
    pub eval_resize: usize,
    pub eval_crop: usize,
    pub channel_means: [f64; 3],
    pub channel_stds: [f64; 3],
    /// Brightness, contrast and saturation factors are drawn from
    /// `U(1 - s, 1 + s)`; `0` disables jitter.
    pub jitter_strength: f64,
    pub flip_probability: f64,
    /// Area fraction range of the random-resized crop.
    pub crop_scale: (f64, f64),
    /// Aspect-ratio range of the random-resized crop.
    pub crop_ratio: (f64, f64),
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self::high_resolution()
    }
}

impl PreprocessConfig {
    fn with_sizes(train_crop_size: usize, eval_resize: usize, eval_crop: usize) -> Self {
        PreprocessConfig {
            train_crop_size,
            eval_resize,
            eval_crop,
            channel_means: IMAGENET_MEANS,
            channel_stds: IMAGENET_STDS,
            jitter_strength: 0.4,
            flip_probability: 0.5,
            crop_scale: (0.08, 1.0),
            crop_ratio: (3.0 / 4.0, 4.0 / 3.0),
        }
    }

    /// 224 crops; eval resize 256 then center crop 224.
    pub fn high_resolution() -> Self {
        Self::with_sizes(224, 256, 224)
    }

    /// 84 crops; eval resize 96 then center crop 84.
    pub fn low_resolution() -> Self {
        Self::with_sizes(84, 96, 84)
    }

    /// Desk-scale preset for 36x36 synthetic images.
    pub fn toy() -> Self {
        PreprocessConfig {
            crop_scale: (0.5, 1.0),
            jitter_strength: 0.2,
            ..Self::with_sizes(32, 36, 32)
        }
    }

    /// No randomness at train time: full-image crop, no flip, no jitter.
    pub fn without_augmentation(mut self) -> Self {
        self.jitter_strength = 0.0;
        self.flip_probability = 0.0;
        self.crop_scale = (1.0, 1.0);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPreprocess(m));
        if self.train_crop_size == 0 || self.eval_resize == 0 || self.eval_crop == 0 {
            return bad("all sizes must be positive".into());
        }
        if self.eval_crop > self.eval_resize {
            return bad(format!(
                "eval_crop {} exceeds eval_resize {}",
                self.eval_crop, self.eval_resize
            ));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad(format!("flip_probability {} not in [0,1]", self.flip_probability));
        }
        if !(0.0..=1.0).contains(&self.jitter_strength) {
            return bad(format!("jitter_strength {} not in [0,1]", self.jitter_strength));
        }
        let (lo, hi) = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!(
                "crop_scale {:?} must satisfy 0 < lo <= hi <= 1",
                self.crop_scale
            ));
        }
        let (rlo, rhi) = self.crop_ratio;
        if !(rlo > 0.0 && rlo <= rhi) {
            return bad(format!("crop_ratio {:?} invalid", self.crop_ratio));
        }
        if self.channel_stds.iter().any(|&s| s <= 0.0) {
            return bad("channel_stds must be positive".into());
        }
        Ok(())
    }
}

/// Top-left offset of a centered `crop` window inside a `size` extent.
pub fn center_crop_offset(size: usize, crop: usize) -> usize {
    (size - crop) / 2
}

fn check_channels(image: &Image) -> Result<()> {
    if image.channels() != 3 {
        return Err(Error::ChannelCount(image.channels()));
    }
    Ok(())
}

/// Bilinear resample of an HWC region with half-pixel centers. Equal sizes
/// reproduce the input exactly.
fn resize_region(
    src: &Array3<f32>,
    top: usize,
    left: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Array3<f64> {
    let c = src.dim().2;
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let axis = |o: usize, scale: f64, len: usize| {
        let p = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, p - i0 as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|x| axis(x, sx, w)).collect();
    let mut out = Array3::zeros((out_h, out_w, c));
    for oy in 0..out_h {
        let (y0, y1, fy) = axis(oy, sy, h);
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for ch in 0..c {
                let p = |y: usize, x: usize| src[[top + y, left + x, ch]] as f64;
                let v = if fy == 0.0 && fx == 0.0 {
                    p(y0, x0)
                } else {
                    let a = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                    let b = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                    a * (1.0 - fy) + b * fy
                };
                out[[oy, ox, ch]] = v;
            }
        }
    }
    out
}

/// Random-resized-crop window `(top, left, h, w)` with the usual ten-attempt
/// rejection loop and a centered fallback.
fn random_crop_window<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    scale: (f64, f64),
    ratio: (f64, f64),
    rng: &mut R,
) -> (usize, usize, usize, usize) {
    if scale.0 >= 1.0 {
        return (0, 0, height, width);
    }
    let area = (height * width) as f64;
    let (log_lo, log_hi) = (ratio.0.ln(), ratio.1.ln());
    for _ in 0..10 {
        let target = area * uniform(rng, scale.0, scale.1);
        let aspect = uniform(rng, log_lo, log_hi).exp();
        let w = (target * aspect).sqrt().round() as usize;
        let h = (target / aspect).sqrt().round() as usize;
        if w > 0 && h > 0 && w <= width && h <= height {
            let top = rng.random_range(0..=height - h);
            let left = rng.random_range(0..=width - w);
            return (top, left, h, w);
        }
    }
    let in_ratio = width as f64 / height as f64;
    let (h, w) = if in_ratio < ratio.0 {
        (((width as f64) / ratio.0).round() as usize, width)
    } else if in_ratio > ratio.1 {
        (height, ((height as f64) * ratio.1).round() as usize)
    } else {
        (height, width)
    };
    ((height - h) / 2, (width - w) / 2, h, w)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn grayscale(px: &[f64]) -> f64 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

/// Brightness, contrast, then saturation, each clamped to `[0, 1]`.
fn color_jitter<R: Rng + ?Sized>(img: &mut Array3<f64>, strength: f64, rng: &mut R) {
    let b = uniform(rng, 1.0 - strength, 1.0 + strength);
    let c = uniform(rng, 1.0 - strength, 1.0 + strength);
    let s = uniform(rng, 1.0 - strength, 1.0 + strength);
    img.mapv_inplace(|v| (v * b).clamp(0.0, 1.0));
    let n = (img.dim().0 * img.dim().1) as f64;
    let mean_gray = img
        .lanes(Axis(2))
        .into_iter()
        .map(|px| grayscale(px.as_slice().expect("contiguous pixel")))
        .sum::<f64>()
        / n;
    img.mapv_inplace(|v| ((v - mean_gray) * c + mean_gray).clamp(0.0, 1.0));
    for mut px in img.lanes_mut(Axis(2)) {
        let g = grayscale(px.as_slice().expect("contiguous pixel"));
        px.mapv_inplace(|v| ((v - g) * s + g).clamp(0.0, 1.0));
    }
}

fn flip_horizontal(img: &mut Array3<f64>) {
    img.invert_axis(Axis(1));
    *img = img.as_standard_layout().into_owned();
}

/// HWC `[0, 1]` -> CHW normalized.
pub fn normalize(img: &Array3<f64>, means: &[f64; 3], stds: &[f64; 3]) -> Array3<f64> {
    let (h, w, _) = img.dim();
    Array3::from_shape_fn((3, h, w), |(c, y, x)| (img[[y, x, c]] - means[c]) / stds[c])
}

/// Inverse of [`normalize`], CHW -> HWC.
pub fn denormalize(t: &Array3<f64>, means: &[f64; 3], stds: &[f64; 3]) -> Array3<f64> {
    let (_, h, w) = t.dim();
    Array3::from_shape_fn((h, w, 3), |(y, x, c)| t[[c, y, x]] * stds[c] + means[c])
}

pub fn preprocess_train<R: Rng + ?Sized>(image: &Image, config: &PreprocessConfig, rng: &mut R) -> Result<Array3<f64>> {
    check_channels(image)?;
    let (top, left, h, w) =
        random_crop_window(image.height(), image.width(), config.crop_scale, config.crop_ratio, rng);
    let size = config.train_crop_size;
    let mut img = resize_region(image.data(), top, left, h, w, size, size);
    if config.flip_probability > 0.0 && rng.random_bool(config.flip_probability) {
        flip_horizontal(&mut img);
    }
    if config.jitter_strength > 0.0 {
        color_jitter(&mut img, config.jitter_strength, rng);
    }
    Ok(normalize(&img, &config.channel_means, &config.channel_stds))
}

pub fn preprocess_eval(image: &Image, config: &PreprocessConfig) -> Result<Array3<f64>> {
    check_channels(image)?;
    let r = config.eval_resize;
    let resized = if image.height() == r && image.width() == r {
        image.data().mapv(|v| v as f64)
    } else {
        resize_region(image.data(), 0, 0, image.height(), image.width(), r, r)
    };
    let off = center_crop_offset(r, config.eval_crop);
    let crop = resized
        .slice(ndarray::s![
            off..off + config.eval_crop,
            off..off + config.eval_crop,
            ..
        ])
        .to_owned();
    Ok(normalize(&crop, &config.channel_means, &config.channel_stds))
}

/// Stacks CHW tensors into an NCHW batch.
pub fn stack_batch(items: &[Array3<f64>]) -> Result<Array4<f64>> {
    let views: Vec<_> = items.iter().map(|a| a.view()).collect();
    ndarray::stack(Axis(0), &views).map_err(|e| Error::Shape(format!("cannot stack batch: {e}")))
}
