//! In-memory image buffers shared by the renderer, oracle, and IO layers.

use crate::{Error, Result};

/// Row-major RGB image with components in [0, 1]. Pixel (0, 0) is top-left.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            pixels: vec![[0.0; 3]; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        RgbImage {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: [f64; 3]) {
        self.pixels[y * self.width + x] = c;
    }

    pub fn check_same_shape(&self, other: &RgbImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Usage(format!(
                "image dimensions differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// Row-major depth map in scene units; depth is the distance along the
/// camera ray. The value 0 is the invalid-depth sentinel (no return).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub depths: Vec<f64>,
}

impl DepthImage {
    pub const INVALID: f64 = 0.0;

    pub fn new(width: usize, height: usize) -> Self {
        DepthImage {
            width,
            height,
            depths: vec![Self::INVALID; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.depths[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, d: f64) {
        self.depths[y * self.width + x] = d;
    }

    /// True where the stored depth is a usable measurement.
    pub fn validity_mask(&self) -> Vec<bool> {
        self.depths
            .iter()
            .map(|&d| d.is_finite() && d > 0.0)
            .collect()
    }
}
