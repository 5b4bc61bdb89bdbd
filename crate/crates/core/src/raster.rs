//! Dense row-major floating-point images.

use crate::error::{Error, Result};

/// `height x width x channels`, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self { width, height, channels, data: vec![value; width * height * channels] }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::dim(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    /// RGB image of a single color.
    pub fn solid(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self { width, height, channels: 3, data }
    }

    pub fn zeros_like(&self) -> Self {
        Self::new(self.width, self.height, self.channels)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize, c: usize) -> &mut f64 {
        &mut self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dim(format!(
                "image {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    /// Sub-image with top-left corner `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Image {
        let mut out = Image::new(w, h, self.channels);
        for y in 0..h {
            let src = ((y0 + y) * self.width + x0) * self.channels;
            let dst = y * w * self.channels;
            out.data[dst..dst + w * self.channels].copy_from_slice(&self.data[src..src + w * self.channels]);
        }
        out
    }

    /// Adds `patch` into this image at `(x0, y0)`.
    pub fn add_patch(&mut self, patch: &Image, x0: usize, y0: usize) {
        for y in 0..patch.height {
            let dst = ((y0 + y) * self.width + x0) * self.channels;
            let src = y * patch.width * patch.channels;
            for k in 0..patch.width * patch.channels {
                self.data[dst + k] += patch.data[src + k];
            }
        }
    }

    /// Pixels where `mask >= 0.5` keep their value; others become `fill`.
    pub fn masked(&self, mask: &Image, fill: [f64; 3]) -> Image {
        let mut out = self.clone();
        for p in 0..self.pixel_count() {
            if mask.data[p] < 0.5 {
                for c in 0..self.channels {
                    out.data[p * self.channels + c] = fill[c.min(2)];
                }
            }
        }
        out
    }

    /// Single-channel image of values `>= threshold` as 1.0, else 0.0.
    pub fn threshold(&self, threshold: f64) -> Image {
        let data = self.data.iter().map(|v| if *v >= threshold { 1.0 } else { 0.0 }).collect();
        Image { data, ..*self }
    }
}
