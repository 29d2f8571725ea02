//! Procedural stand-in datasets: colored geometric shapes on textured
//! backgrounds. A class is a (shape, color, size tier) combination; the
//! background style is the domain knob used to build cross-domain splits.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::Image;
use super::manifest::{Split, SplitManifest};
use super::ClassSection;
use crate::error::{Error, Result};
use crate::util::mix_seed;

pub const NUM_SHAPES: usize = 8;
pub const NUM_COLORS: usize = 8;
const SIZE_TIERS: [f64; 2] = [1.0, 0.62];

/// Largest number of distinct classes the generator can produce.
pub const MAX_CLASSES: usize = NUM_SHAPES * NUM_COLORS * SIZE_TIERS.len();

/// Within-class variation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassGeometry {
    /// Maximum center offset, as a fraction of the image side.
    pub position_jitter: f64,
    /// Shape radius range, as a fraction of the image side.
    pub radius_range: (f64, f64),
    /// Maximum absolute rotation in radians.
    pub rotation_jitter: f64,
    /// Maximum absolute per-channel color offset.
    pub color_jitter: f64,
}

impl Default for ClassGeometry {
    fn default() -> Self {
        ClassGeometry {
            position_jitter: 0.12,
            radius_range: (0.22, 0.32),
            rotation_jitter: 0.3,
            color_jitter: 0.08,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    /// Slow sinusoidal shading.
    Smooth,
    /// Oriented stripes.
    Stripes,
    /// Rotated checkerboard.
    Checker,
    /// Independent per-pixel noise.
    Noise,
}

/// Background distribution of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainStyle {
    pub background: Background,
    pub tint: [f64; 3],
    pub accent: [f64; 3],
    /// Blend weight of the accent color at pattern peaks, in `[0, 1]`.
    pub texture_contrast: f64,
    /// Pattern period range in pixels.
    pub texture_period: (f64, f64),
    /// Per-image additive jitter on the tint.
    pub tint_jitter: f64,
}

impl Default for DomainStyle {
    fn default() -> Self {
        Self::source()
    }
}

impl DomainStyle {
    /// Plain, softly shaded gray backgrounds.
    pub fn source() -> Self {
        DomainStyle {
            background: Background::Smooth,
            tint: [0.42, 0.42, 0.42],
            accent: [0.58, 0.58, 0.58],
            texture_contrast: 0.5,
            texture_period: (24.0, 48.0),
            tint_jitter: 0.05,
        }
    }

    /// Busy, colored high-frequency backgrounds.
    pub fn target() -> Self {
        DomainStyle {
            background: Background::Checker,
            tint: [0.62, 0.45, 0.25],
            accent: [0.18, 0.32, 0.55],
            texture_contrast: 1.0,
            texture_period: (5.0, 11.0),
            tint_jitter: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub examples_per_class: usize,
    pub image_size: usize,
    /// First class index; disjoint offsets give disjoint class sets.
    pub class_offset: usize,
    pub geometry: ClassGeometry,
    pub domain: DomainStyle,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n_classes: usize, examples_per_class: usize, image_size: usize, seed: u64) -> Self {
        SyntheticSpec {
            n_classes,
            examples_per_class,
            image_size,
            class_offset: 0,
            geometry: ClassGeometry::default(),
            domain: DomainStyle::source(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.examples_per_class == 0 || self.image_size == 0 {
            return Err(Error::InvalidArgument(
                "synthetic dataset counts and image size must be positive".into(),
            ));
        }
        if self.class_offset + self.n_classes > MAX_CLASSES {
            return Err(Error::InvalidArgument(format!(
                "synthetic generator supports at most {MAX_CLASSES} classes (offset {} + count {})",
                self.class_offset, self.n_classes
            )));
        }
        let (lo, hi) = self.geometry.radius_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::InvalidArgument(format!(
                "radius_range {:?}",
                self.geometry.radius_range
            )));
        }
        Ok(())
    }
}

pub fn class_name(index: usize) -> String {
    format!("syn{index:03}")
}

/// (shape, color, size tier) of a class index; unique for `index < MAX_CLASSES`.
pub fn class_attributes(index: usize) -> (usize, usize, usize) {
    let within = index % (NUM_SHAPES * NUM_COLORS);
    let shape = within % NUM_SHAPES;
    let color = (within / NUM_SHAPES + shape) % NUM_COLORS;
    (shape, color, index / (NUM_SHAPES * NUM_COLORS))
}

fn palette(color: usize) -> [f64; 3] {
    // Eight hues at 45 degree steps, s = 0.85, v = 0.95.
    let h = color as f64 * 45.0 / 60.0;
    let (s, v) = (0.85, 0.95);
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Point-in-shape test in shape-local coordinates scaled to unit radius.
fn inside(shape: usize, u: f64, v: f64) -> bool {
    let r = (u * u + v * v).sqrt();
    match shape {
        0 => r < 1.0,
        1 => u.abs().max(v.abs()) < 0.82,
        2 => {
            // Upward triangle with circumradius 1.
            let (y, x) = (-v, u);
            y > -0.5 && y < 1.0 - 3f64.sqrt() * x.abs()
        }
        3 => (u.abs() < 0.3 && v.abs() < 1.0) || (v.abs() < 0.3 && u.abs() < 1.0),
        4 => (0.55..1.0).contains(&r),
        5 => u.abs() + v.abs() < 1.0,
        6 => u.abs() < 1.0 && v.abs() < 0.35,
        _ => {
            let m = u.abs().max(v.abs());
            (0.5..0.85).contains(&m)
        }
    }
}

fn background_value<R: Rng + ?Sized>(style: &DomainStyle, pattern: &Pattern, y: f64, x: f64, rng: &mut R) -> f64 {
    let (s, c) = pattern.angle.sin_cos();
    let along = x * c + y * s;
    let across = -x * s + y * c;
    let tau = std::f64::consts::TAU;
    match style.background {
        Background::Smooth => 0.5 + 0.5 * (tau * along / pattern.period + pattern.phase).sin(),
        Background::Stripes => {
            let w = (tau * along / pattern.period + pattern.phase).sin();
            if w >= 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Background::Checker => {
            let a = (tau * along / pattern.period + pattern.phase).sin();
            let b = (tau * across / pattern.period + pattern.phase2).sin();
            if a * b >= 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Background::Noise => rng.random::<f64>(),
    }
}

struct Pattern {
    angle: f64,
    period: f64,
    phase: f64,
    phase2: f64,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Renders example `index` of class `class_index`. Deterministic in its arguments.
pub fn render_example(spec: &SyntheticSpec, class_index: usize, index: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, &[class_index as u64, index as u64]));
    let size = spec.image_size as f64;
    let g = &spec.geometry;
    let style = &spec.domain;
    let (shape, color, tier) = class_attributes(class_index);

    let pattern = Pattern {
        angle: uniform(&mut rng, 0.0, std::f64::consts::PI),
        period: uniform(&mut rng, style.texture_period.0, style.texture_period.1),
        phase: uniform(&mut rng, 0.0, std::f64::consts::TAU),
        phase2: uniform(&mut rng, 0.0, std::f64::consts::TAU),
    };
    let tint: Vec<f64> = style
        .tint
        .iter()
        .map(|&t| (t + uniform(&mut rng, -style.tint_jitter, style.tint_jitter)).clamp(0.0, 1.0))
        .collect();
    let base = palette(color);
    let fg: Vec<f64> = base
        .iter()
        .map(|&v| (v + uniform(&mut rng, -g.color_jitter, g.color_jitter)).clamp(0.0, 1.0))
        .collect();
    let radius = uniform(&mut rng, g.radius_range.0, g.radius_range.1) * size * SIZE_TIERS[tier];
    let cy = size / 2.0 + uniform(&mut rng, -g.position_jitter, g.position_jitter) * size;
    let cx = size / 2.0 + uniform(&mut rng, -g.position_jitter, g.position_jitter) * size;
    let rot = uniform(&mut rng, -g.rotation_jitter, g.rotation_jitter);
    let (rs, rc) = rot.sin_cos();

    let n = spec.image_size;
    let mut data = ndarray::Array3::<f32>::zeros((n, n, 3));
    for y in 0..n {
        for x in 0..n {
            let t = background_value(style, &pattern, y as f64, x as f64, &mut rng) * style.texture_contrast;
            // 2x2 supersampled coverage.
            let mut cover = 0.0;
            for (oy, ox) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                let dy = y as f64 + oy - cy;
                let dx = x as f64 + ox - cx;
                let u = (dx * rc + dy * rs) / radius;
                let v = (-dx * rs + dy * rc) / radius;
                if inside(shape, u, v) {
                    cover += 0.25;
                }
            }
            for c in 0..3 {
                let bg = tint[c] * (1.0 - t) + style.accent[c] * t;
                data[[y, x, c]] = (bg * (1.0 - cover) + fg[c] * cover) as f32;
            }
        }
    }
    let mut img = Image::new(data);
    img.quantize_u8();
    img
}

/// Generates `n_classes x examples_per_class` images keyed by class name.
pub fn make_synthetic_dataset(spec: &SyntheticSpec) -> Result<ClassSection<Arc<Image>>> {
    spec.validate()?;
    Ok((0..spec.n_classes)
        .map(|i| {
            let class_index = spec.class_offset + i;
            let images = (0..spec.examples_per_class)
                .map(|j| Arc::new(render_example(spec, class_index, j)))
                .collect();
            (class_name(class_index), images)
        })
        .collect())
}

/// Writes PNGs under `dir/images/<class>/` plus `dir/manifest.csv`.
pub fn write_dataset(dir: &Path, splits: &[(Split, &ClassSection<Arc<Image>>)]) -> Result<SplitManifest> {
    let mut manifest = SplitManifest::default();
    for &(split, section) in splits {
        for (class, images) in section {
            let class_dir = dir.join("images").join(class);
            std::fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
            let mut paths = Vec::with_capacity(images.len());
            for (i, img) in images.iter().enumerate() {
                let p = class_dir.join(format!("{i:04}.png"));
                img.save_png(&p)?;
                paths.push(p);
            }
            match split {
                Split::Base => manifest.base_classes.push(class.clone()),
                Split::Val => manifest.validation_classes.push(class.clone()),
                Split::Novel => manifest.novel_classes.push(class.clone()),
            }
            manifest.records.insert(class.clone(), paths);
        }
    }
    manifest.validate()?;
    manifest.save(&dir.join("manifest.csv"))?;
    Ok(manifest)
}
