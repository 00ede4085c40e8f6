//! Images, samples, the synthetic generator, augmentation and manifests.

mod augment;
mod manifest;
pub mod pgm;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{augment, two_views, warp_affine, Affine, AugmentConfig};
pub use manifest::{load_manifest, write_manifest};
pub use synth::{generate_splits, generate_synthetic, render, Geometry, Splits, SynthConfig};

/// Grayscale image with intensities in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::Data(format!(
                "{} pixels do not form a {height}x{width} image",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
            return Err(Error::Data(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, pixels: vec![0.0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks_exact(self.width) {
            pixels.extend(row.iter().rev());
        }
        Self { height: self.height, width: self.width, pixels }
    }

    /// Rounds every intensity to the nearest multiple of `1/65535`, the
    /// precision of the 16-bit image files.
    pub fn quantized(&self) -> Self {
        let pixels = self.pixels.iter().map(|&p| pgm::dequantize(pgm::quantize(p))).collect();
        Self { height: self.height, width: self.width, pixels }
    }
}

/// One image with an optional ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: ImageTensor,
    pub label: Option<f64>,
}

impl Sample {
    pub fn is_labeled(&self) -> bool {
        self.label.is_some()
    }
}

/// Split sizes of a desk-scale experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub labeled: usize,
    pub unlabeled: usize,
    pub validation: usize,
    pub test: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { labeled: 64, unlabeled: 512, validation: 64, test: 128 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.labeled == 0 || self.validation < 2 || self.test < 2 {
            return Err(Error::Config(format!(
                "split needs >=1 labeled and >=2 validation/test samples, got {self:?}"
            )));
        }
        Ok(())
    }
}
