use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved floating point image, row-major `(row, col, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "raster {height}x{width}x{channels} needs {} samples, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Raster {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Raster {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Raster {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    /// Bilinear sample at `(u, v) = (column, row)`; integer coordinates hit
    /// pixel centers. Coordinates outside `[0, W-1] x [0, H-1]` yield 0.
    pub fn bilinear(&self, u: f64, v: f64, out: &mut [f32]) {
        let max_u = (self.width - 1) as f64;
        let max_v = (self.height - 1) as f64;
        if !(u >= 0.0 && v >= 0.0 && u <= max_u && v <= max_v) {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let c0 = (u.floor() as usize).min(self.width.saturating_sub(2));
        let r0 = (v.floor() as usize).min(self.height.saturating_sub(2));
        let c1 = (c0 + 1).min(self.width - 1);
        let r1 = (r0 + 1).min(self.height - 1);
        let fu = u - c0 as f64;
        let fv = v - r0 as f64;
        for (ch, o) in out.iter_mut().enumerate() {
            let top = self.at(r0, c0, ch) as f64 * (1.0 - fu) + self.at(r0, c1, ch) as f64 * fu;
            let bottom = self.at(r1, c0, ch) as f64 * (1.0 - fu) + self.at(r1, c1, ch) as f64 * fu;
            *o = (top * (1.0 - fv) + bottom * fv) as f32;
        }
    }

    /// Loads an 8- or 16-bit PNG, scaled to `[0, 1]`.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        let channels = img.color().channel_count() as usize;
        let (width, height) = (img.width() as usize, img.height() as usize);
        let data: Vec<f32> = match img {
            image::DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
            image::DynamicImage::ImageLumaA8(b) => b.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
            image::DynamicImage::ImageRgb8(b) => b.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
            image::DynamicImage::ImageRgba8(b) => b.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
            image::DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
            image::DynamicImage::ImageLumaA16(b) => b.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
            image::DynamicImage::ImageRgb16(b) => b.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
            image::DynamicImage::ImageRgba16(b) => b.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
            other => {
                return Err(Error::Format(format!(
                    "{}: unsupported pixel format {:?}",
                    path.display(),
                    other.color()
                )))
            }
        };
        Raster::new(height, width, channels, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_hits_pixels_and_reproduces_ramps() {
        let img = Raster::from_fn(8, 10, 1, |r, c, _| (3 * r + c) as f32);
        let mut out = [0.0f32];
        img.bilinear(4.0, 5.0, &mut out);
        assert_eq!(out[0], img.at(5, 4, 0));
        img.bilinear(9.0, 7.0, &mut out);
        assert_eq!(out[0], img.at(7, 9, 0));
        img.bilinear(2.25, 3.5, &mut out);
        assert!((out[0] - (3.0 * 3.5 + 2.25)).abs() < 1e-5);
        img.bilinear(-0.1, 3.0, &mut out);
        assert_eq!(out[0], 0.0);
        img.bilinear(9.01, 3.0, &mut out);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn png_roundtrip_8_and_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p8 = dir.path().join("a.png");
        image::GrayImage::from_raw(2, 1, vec![0, 255]).unwrap().save(&p8).unwrap();
        let r = Raster::load_png(&p8).unwrap();
        assert_eq!((r.height, r.width, r.channels), (1, 2, 1));
        assert_eq!(r.data, vec![0.0, 1.0]);

        let p16 = dir.path().join("b.png");
        image::ImageBuffer::<image::Luma<u16>, _>::from_raw(1, 1, vec![65535u16])
            .unwrap()
            .save(&p16)
            .unwrap();
        assert_eq!(Raster::load_png(&p16).unwrap().data, vec![1.0]);
    }
}
