//! Random affine warps, brightness/contrast jitter and horizontal flips.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ImageTensor, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub max_rotation_deg: f64,
    /// Fraction of the image size.
    pub max_translation: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Additive brightness offset drawn from `[-brightness, brightness]`.
    pub brightness: f64,
    pub contrast_min: f64,
    pub contrast_max: f64,
    pub flip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_rotation_deg: 10.0,
            max_translation: 0.1,
            scale_min: 0.9,
            scale_max: 1.1,
            brightness: 0.1,
            contrast_min: 0.9,
            contrast_max: 1.1,
            flip_prob: 0.5,
        }
    }
}

/// Smallest scale factor accepted by [`AugmentConfig::validate`].
const MIN_SCALE: f64 = 0.25;

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            max_rotation_deg: 0.0,
            max_translation: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            brightness: 0.0,
            contrast_min: 1.0,
            contrast_max: 1.0,
            flip_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.max_rotation_deg,
            self.max_translation,
            self.scale_min,
            self.scale_max,
            self.brightness,
            self.contrast_min,
            self.contrast_max,
            self.flip_prob,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("augmentation ranges must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip probability {} outside [0, 1]", self.flip_prob)));
        }
        if self.scale_min < MIN_SCALE || self.scale_max < self.scale_min {
            return Err(Error::Config(format!(
                "scale range [{}, {}] must satisfy {MIN_SCALE} <= min <= max",
                self.scale_min, self.scale_max
            )));
        }
        if self.contrast_min < 0.0 || self.contrast_max < self.contrast_min {
            return Err(Error::Config("contrast range must be non-negative and ordered".into()));
        }
        if self.max_rotation_deg < 0.0 || self.max_translation < 0.0 || self.brightness < 0.0 {
            return Err(Error::Config("rotation, translation and brightness ranges must be >= 0".into()));
        }
        Ok(())
    }
}

/// Similarity transform about the image centre. Translation is in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub angle_deg: f64,
    pub tx: f64,
    pub ty: f64,
    pub scale: f64,
}

impl Affine {
    pub fn is_identity(&self) -> bool {
        self.angle_deg == 0.0 && self.tx == 0.0 && self.ty == 0.0 && self.scale == 1.0
    }
}

/// Warps `image` by `t` with bilinear resampling and edge clamping.
pub fn warp_affine(image: &ImageTensor, t: &Affine) -> ImageTensor {
    if t.is_identity() {
        return image.clone();
    }
    let (h, w) = (image.height(), image.width());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = t.angle_deg.to_radians().sin_cos();
    let src = image.pixels();
    let at = |y: isize, x: isize| {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        f64::from(src[yy * w + xx])
    };
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            // inverse map: undo translation, scale, rotation
            let dx = (x as f64 - cx - t.tx) / t.scale;
            let dy = (y as f64 - cy - t.ty) / t.scale;
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
            out.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    ImageTensor::new(h, w, out).expect("clamped resampling")
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.gen();
    lo + u * (hi - lo)
}

/// One random augmentation. Always consumes the same number of draws from
/// `rng`, whatever the configuration. The label is untouched by contract.
pub fn augment<R: Rng + ?Sized>(sample: &Sample, cfg: &AugmentConfig, rng: &mut R) -> ImageTensor {
    let image = &sample.image;
    let size = image.width().max(image.height()) as f64;
    let t = Affine {
        angle_deg: uniform(rng, -cfg.max_rotation_deg, cfg.max_rotation_deg),
        tx: size * uniform(rng, -cfg.max_translation, cfg.max_translation),
        ty: size * uniform(rng, -cfg.max_translation, cfg.max_translation),
        scale: uniform(rng, cfg.scale_min, cfg.scale_max).max(MIN_SCALE),
    };
    let brightness = uniform(rng, -cfg.brightness, cfg.brightness);
    let contrast = uniform(rng, cfg.contrast_min, cfg.contrast_max);
    let flip = rng.gen::<f64>() < cfg.flip_prob;

    let mut out = warp_affine(image, &t);
    if brightness != 0.0 || contrast != 1.0 {
        let pixels = out
            .pixels()
            .iter()
            .map(|&p| ((f64::from(p) - 0.5) * contrast + 0.5 + brightness).clamp(0.0, 1.0) as f32)
            .collect();
        out = ImageTensor::new(out.height(), out.width(), pixels).expect("clamped jitter");
    }
    if flip {
        out = out.flip_horizontal();
    }
    out
}

/// Two independent augmentations of the same sample.
pub fn two_views<R: Rng + ?Sized>(sample: &Sample, cfg: &AugmentConfig, rng: &mut R) -> (ImageTensor, ImageTensor) {
    let a = augment(sample, cfg, rng);
    let b = augment(sample, cfg, rng);
    (a, b)
}
