//! Floating point raster images.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Row-major image with 1 or 3 interleaved channels, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Size(format!("image must be at least 1x1, got {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Config(format!("images have 1 or 3 channels, got {channels}")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Size(format!(
                "expected {} pixel values for {width}x{height}x{channels}, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        Ok(Image { width, height, channels, pixels })
    }

    /// Constant image.
    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Grayscale image from a per-pixel function of `(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, 1, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    fn get_clamped(&self, x: isize, y: isize, c: usize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y, c)
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at
    /// integer positions), replicating the border outside the image.
    pub fn sample(&self, x: f64, y: f64, c: usize) -> f64 {
        let x0 = libm::floor(x);
        let y0 = libm::floor(y);
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = self.get_clamped(xi, yi, c);
        let b = self.get_clamped(xi + 1, yi, c);
        let d = self.get_clamped(xi, yi + 1, c);
        let e = self.get_clamped(xi + 1, yi + 1, c);
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (d * (1.0 - fx) + e * fx) * fy
    }

    /// Bilinear resampling of the region `(x0, y0, w, h)` onto an
    /// `out_w × out_h` grid. The region may extend outside the image.
    pub fn crop_resize(&self, x0: f64, y0: f64, w: f64, h: f64, out_w: usize, out_h: usize) -> Result<Image> {
        if out_w == 0 || out_h == 0 || !(w > 0.0) || !(h > 0.0) {
            return Err(Error::Size(format!("invalid resample target {out_w}x{out_h} from {w}x{h}")));
        }
        let sx = w / out_w as f64;
        let sy = h / out_h as f64;
        let mut pixels = Vec::with_capacity(out_w * out_h * self.channels);
        for oy in 0..out_h {
            let y = y0 + (oy as f64 + 0.5) * sy - 0.5;
            for ox in 0..out_w {
                let x = x0 + (ox as f64 + 0.5) * sx - 0.5;
                for c in 0..self.channels {
                    pixels.push(self.sample(x, y, c));
                }
            }
        }
        Image::new(out_w, out_h, self.channels, pixels)
    }

    pub fn resize(&self, out_w: usize, out_h: usize) -> Result<Image> {
        self.crop_resize(0.0, 0.0, self.width as f64, self.height as f64, out_w, out_h)
    }

    /// Halve both dimensions by averaging 2×2 blocks (odd trailing rows and
    /// columns are dropped).
    pub fn downsample2(&self) -> Result<Image> {
        let (w, h) = (self.width / 2, self.height / 2);
        if w == 0 || h == 0 {
            return Err(Error::Size(format!("cannot halve a {}x{} image", self.width, self.height)));
        }
        let mut pixels = Vec::with_capacity(w * h * self.channels);
        for y in 0..h {
            for x in 0..w {
                for c in 0..self.channels {
                    let s = self.get(2 * x, 2 * y, c)
                        + self.get(2 * x + 1, 2 * y, c)
                        + self.get(2 * x, 2 * y + 1, c)
                        + self.get(2 * x + 1, 2 * y + 1, c);
                    pixels.push(0.25 * s);
                }
            }
        }
        Image::new(w, h, self.channels, pixels)
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                for c in 0..self.channels {
                    pixels.push(self.get(x, y, c));
                }
            }
        }
        Image { pixels, ..*self }
    }

    pub fn rotate180(&self) -> Image {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for y in (0..self.height).rev() {
            for x in (0..self.width).rev() {
                for c in 0..self.channels {
                    pixels.push(self.get(x, y, c));
                }
            }
        }
        Image { pixels, ..*self }
    }

    /// Add `delta` to every intensity (no clamping).
    pub fn offset(&self, delta: f64) -> Image {
        Image { pixels: self.pixels.iter().map(|p| p + delta).collect(), ..*self }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_buffers() {
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Image::new(0, 2, 1, vec![]).is_err());
        assert!(Image::new(1, 1, 2, vec![0.0; 2]).is_err());
    }

    #[test]
    fn identity_resize_is_exact() {
        let img = Image::from_fn(7, 5, |x, y| (x * 3 + y) as f64 / 40.0).unwrap();
        assert_eq!(img.resize(7, 5).unwrap(), img);
    }

    #[test]
    fn downsample_averages_blocks() {
        let img = Image::new(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(img.downsample2().unwrap().pixels(), &[0.5]);
    }

    #[test]
    fn flips_are_involutions() {
        let img = Image::from_fn(5, 4, |x, y| (x * 7 + y * 3) as f64 / 50.0).unwrap();
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        assert_eq!(img.rotate180().rotate180(), img);
        assert_eq!(img.flip_horizontal().get(0, 1, 0), img.get(4, 1, 0));
    }
}
