use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};

/// Decoded image, HWC layout, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f32>,
}

impl Image {
    pub fn new(data: Array3<f32>) -> Self {
        Image { data }
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, f: impl FnMut((usize, usize, usize)) -> f32) -> Self {
        Image {
            data: Array3::from_shape_fn((height, width, channels), f),
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        Self::from_fn(height, width, 3, |(_, _, c)| rgb[c])
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    /// Mean of each channel over all pixels.
    pub fn channel_means(&self) -> Vec<f64> {
        let n = (self.height() * self.width()) as f64;
        (0..self.channels())
            .map(|c| {
                self.data
                    .slice(ndarray::s![.., .., c])
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>()
                    / n
            })
            .collect()
    }

    /// Snap every value to the nearest 8-bit level so a PNG round trip is exact.
    pub fn quantize_u8(&mut self) {
        self.data.mapv_inplace(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
            rgb.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
        });
        Ok(Image { data })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if self.channels() != 3 {
            return Err(Error::ChannelCount(self.channels()));
        }
        let (h, w, _) = self.data.dim();
        let buf = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let px = |c| (self.data[[y as usize, x as usize, c]].clamp(0.0, 1.0) * 255.0).round() as u8;
            image::Rgb([px(0), px(1), px(2)])
        });
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let mut img = Image::from_fn(5, 7, 3, |(y, x, c)| ((y * 7 + x) * 3 + c) as f32 / 104.0);
        img.quantize_u8();
        img.save_png(&path).unwrap();
        let back = Image::load(&path).unwrap();
        assert_eq!(img, back);
    }
}
