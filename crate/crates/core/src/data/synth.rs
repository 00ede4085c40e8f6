//! Synthetic image→scalar generator.
//!
//! Each image shows a bright annulus on a cluttered background. The annulus
//! intensity is an affine function of the label, so the label can be read
//! off the ring as a whole but not from any single pixel once texture noise
//! and clutter are added.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ImageTensor, Sample, SplitSpec};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub image_size: usize,
    pub label_min: f64,
    pub label_max: f64,
    /// Ring intensity is `intensity_offset + intensity_slope · density`.
    pub intensity_offset: f64,
    pub intensity_slope: f64,
    /// Standard deviation of the smooth texture field added to every pixel.
    pub texture_sigma: f64,
    /// Standard deviation of the label-independent part of the rendered
    /// density (imaging variability between the scan and the reference).
    pub density_jitter: f64,
    pub clutter: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            label_min: 0.2,
            label_max: 1.4,
            intensity_offset: 0.1,
            intensity_slope: 0.55,
            texture_sigma: 0.05,
            density_jitter: 0.0,
            clutter: true,
        }
    }
}

impl SynthConfig {
    /// Configuration with texture noise and density jitter switched off.
    pub fn noiseless(self) -> Self {
        Self { texture_sigma: 0.0, density_jitter: 0.0, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 || !(self.label_min < self.label_max) || self.intensity_slope <= 0.0 {
            return Err(Error::Config(format!("invalid synthetic config {self:?}")));
        }
        if self.texture_sigma < 0.0 || self.density_jitter < 0.0 {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        Ok(())
    }

    /// Inverse of the label→ring-intensity map (without jitter).
    pub fn label_from_intensity(&self, intensity: f64) -> f64 {
        (intensity - self.intensity_offset) / self.intensity_slope
    }
}

/// Placement of the annulus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub cx: f64,
    pub cy: f64,
    pub r_inner: f64,
    pub r_outer: f64,
}

impl Geometry {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let d = ((x as f64 + 0.5 - self.cx).powi(2) + (y as f64 + 0.5 - self.cy).powi(2)).sqrt();
        d >= self.r_inner && d <= self.r_outer
    }

    /// Mean intensity over the ring pixels.
    pub fn ring_mean(&self, image: &ImageTensor) -> f64 {
        let (mut sum, mut count) = (0.0, 0usize);
        for y in 0..image.height() {
            for x in 0..image.width() {
                if self.contains(y, x) {
                    sum += f64::from(image.get(y, x));
                    count += 1;
                }
            }
        }
        sum / count as f64
    }
}

/// Smooth zero-mean texture: two octaves of bilinearly interpolated lattice
/// noise, normalised to unit standard deviation.
fn texture_field(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut field = vec![0.0; size * size];
    for (spacing, weight) in [(8.0, 1.0), (4.0, 0.5)] {
        let cells = (size as f64 / spacing).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..cells * cells).map(|_| StandardNormal.sample(rng)).collect();
        for y in 0..size {
            for x in 0..size {
                let fy = y as f64 / spacing;
                let fx = x as f64 / spacing;
                let (iy, ix) = (fy.floor() as usize, fx.floor() as usize);
                let (ty, tx) = (fy - iy as f64, fx - ix as f64);
                let at = |a: usize, b: usize| lattice[a * cells + b];
                let v = (1.0 - ty) * ((1.0 - tx) * at(iy, ix) + tx * at(iy, ix + 1))
                    + ty * ((1.0 - tx) * at(iy + 1, ix) + tx * at(iy + 1, ix + 1));
                field[y * size + x] += weight * v;
            }
        }
    }
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let std = (field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    field.iter().map(|v| (v - mean) / std.max(1e-12)).collect()
}

/// Renders one image for `label`, drawing geometry, clutter and noise from
/// `rng`. Every random quantity is drawn whether or not it is used, so the
/// geometry of a seed does not depend on the noise settings.
pub fn render(label: f64, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (ImageTensor, Geometry) {
    let size = cfg.image_size;
    let s = size as f64;
    let r_outer = s * rng.gen_range(0.25..0.34);
    let geometry = Geometry {
        cx: s / 2.0 + s * rng.gen_range(-0.09..0.09),
        cy: s / 2.0 + s * rng.gen_range(-0.09..0.09),
        r_inner: r_outer * rng.gen_range(0.45..0.6),
        r_outer,
    };
    let jitter: f64 = StandardNormal.sample(rng);
    let density = label + cfg.density_jitter * jitter;
    let ring = cfg.intensity_offset + cfg.intensity_slope * density;

    let background = rng.gen_range(0.05..0.2);
    let tilt = (rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05));
    let blobs: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| (rng.gen_range(0.0..s), rng.gen_range(0.0..s), s * rng.gen_range(0.05..0.13), rng.gen_range(0.05..0.3)))
        .collect();
    let n_blobs = rng.gen_range(1..=4);
    let texture = texture_field(size, rng);

    let mut pixels = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let mut v = if geometry.contains(y, x) {
                ring
            } else {
                let (u, w) = (x as f64 / s - 0.5, y as f64 / s - 0.5);
                let mut b = background + tilt.0 * u + tilt.1 * w;
                if cfg.clutter {
                    for &(bx, by, sigma, amp) in &blobs[..n_blobs] {
                        let d2 = (x as f64 + 0.5 - bx).powi(2) + (y as f64 + 0.5 - by).powi(2);
                        b += amp * (-d2 / (2.0 * sigma * sigma)).exp();
                    }
                }
                b
            };
            v += cfg.texture_sigma * texture[y * size + x];
            pixels.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    (ImageTensor::new(size, size, pixels).expect("clamped pixels"), geometry)
}

fn sample_for(id: String, data_seed: u64, cfg: &SynthConfig, labeled: bool) -> Sample {
    let mut rng = seed::rng(seed::derive(data_seed, &id));
    let label = rng.gen_range(cfg.label_min..cfg.label_max);
    let (image, _) = render(label, cfg, &mut rng);
    Sample { id, image, label: labeled.then_some(label) }
}

/// `n` labeled samples with ids `s00000…`, each drawn from its own seed
/// derived from `data_seed` and the id.
pub fn generate_synthetic(n: usize, data_seed: u64, cfg: &SynthConfig) -> Vec<Sample> {
    generate_prefixed("s", n, data_seed, cfg, true)
}

fn generate_prefixed(prefix: &str, n: usize, data_seed: u64, cfg: &SynthConfig, labeled: bool) -> Vec<Sample> {
    (0..n).map(|k| sample_for(format!("{prefix}{k:05}"), data_seed, cfg, labeled)).collect()
}

/// Labeled-train, unlabeled, validation and test samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Splits {
    pub fn iter_named(&self) -> impl Iterator<Item = (&'static str, &[Sample])> {
        [
            ("train", self.train.as_slice()),
            ("unlabeled", self.unlabeled.as_slice()),
            ("validation", self.validation.as_slice()),
            ("test", self.test.as_slice()),
        ]
        .into_iter()
    }
}

/// Generates all four splits. Ids carry the split name, so splits are
/// disjoint for every seed. Images are quantized to file precision so that
/// in-memory and on-disk datasets are identical.
pub fn generate_splits(split: &SplitSpec, data_seed: u64, cfg: &SynthConfig) -> Result<Splits> {
    split.validate()?;
    cfg.validate()?;
    let quantize = |v: Vec<Sample>| {
        v.into_iter().map(|s| Sample { image: s.image.quantized(), ..s }).collect::<Vec<_>>()
    };
    Ok(Splits {
        train: quantize(generate_prefixed("train-", split.labeled, data_seed, cfg, true)),
        unlabeled: quantize(generate_prefixed("unlabeled-", split.unlabeled, data_seed, cfg, false)),
        validation: quantize(generate_prefixed("validation-", split.validation, data_seed, cfg, true)),
        test: quantize(generate_prefixed("test-", split.test, data_seed, cfg, true)),
    })
}
