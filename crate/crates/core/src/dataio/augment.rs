//! Paired image/label augmentation: in-plane rotation, integer translation
//! and flips.
//!
//! The forward map of a pixel position `p` (relative to the slice center
//! `c`) is `flip(R(p - c) + c + t)`. Outputs are produced by inverse mapping;
//! images are sampled bilinearly, labels by nearest neighbour, and anything
//! that falls outside the frame becomes 0 / background.

use crate::dataio::volume::{ImageSlice, LabelSlice, Plane};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub max_rotation_deg: f64,
    pub max_translation: i64,
    pub hflip_probability: f64,
    pub vflip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { max_rotation_deg: 10.0, max_translation: 10, hflip_probability: 0.5, vflip: false }
    }
}

/// One concrete transform.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub tx: i64,
    pub ty: i64,
    pub hflip: bool,
    pub vflip: bool,
}

impl AugmentParams {
    pub fn sample(cfg: &AugmentConfig, rng: &mut Rng) -> Self {
        let rotation_deg = rng.uniform_range(-cfg.max_rotation_deg, cfg.max_rotation_deg);
        let tx = rng.int_range(-cfg.max_translation, cfg.max_translation);
        let ty = rng.int_range(-cfg.max_translation, cfg.max_translation);
        let hflip = rng.bernoulli(cfg.hflip_probability);
        let vflip = cfg.vflip && rng.bernoulli(0.5);
        AugmentParams { rotation_deg, tx, ty, hflip, vflip }
    }

    /// Source position for output pixel `(x, y)`.
    fn source(&self, x: f64, y: f64, nx: usize, ny: usize) -> (f64, f64) {
        let (cx, cy) = ((nx as f64 - 1.0) / 2.0, (ny as f64 - 1.0) / 2.0);
        let x = if self.hflip { nx as f64 - 1.0 - x } else { x };
        let y = if self.vflip { ny as f64 - 1.0 - y } else { y };
        let (dx, dy) = (x - cx - self.tx as f64, y - cy - self.ty as f64);
        if self.rotation_deg == 0.0 {
            return (dx + cx, dy + cy);
        }
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        // inverse rotation
        (c * dx + s * dy + cx, -s * dx + c * dy + cy)
    }
}

fn bilinear(p: &ImageSlice, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let at = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= p.nx as f64 || yi >= p.ny as f64 {
            0.0
        } else {
            p.get(xi as usize, yi as usize)
        }
    };
    let mut v = (1.0 - fx) * (1.0 - fy) * at(x0, y0);
    if fx != 0.0 {
        v += fx * (1.0 - fy) * at(x0 + 1.0, y0);
    }
    if fy != 0.0 {
        v += (1.0 - fx) * fy * at(x0, y0 + 1.0);
    }
    if fx != 0.0 && fy != 0.0 {
        v += fx * fy * at(x0 + 1.0, y0 + 1.0);
    }
    v
}

fn nearest(p: &LabelSlice, x: f64, y: f64) -> u8 {
    let (xi, yi) = (x.round(), y.round());
    if xi < 0.0 || yi < 0.0 || xi >= p.nx as f64 || yi >= p.ny as f64 {
        0
    } else {
        p.get(xi as usize, yi as usize)
    }
}

/// Applies the same transform to an image and its labels.
pub fn apply(image: &ImageSlice, labels: &LabelSlice, params: &AugmentParams) -> Result<(ImageSlice, LabelSlice)> {
    if !image.same_dims(labels) {
        return Err(Error::shape(format!(
            "image {}x{} and labels {}x{} differ",
            image.nx, image.ny, labels.nx, labels.ny
        )));
    }
    let (nx, ny) = (image.nx, image.ny);
    let mut out_i = Plane::filled(nx, ny, 0.0);
    let mut out_l = Plane::filled(nx, ny, 0u8);
    for y in 0..ny {
        for x in 0..nx {
            let (sx, sy) = params.source(x as f64, y as f64, nx, ny);
            out_i.set(x, y, bilinear(image, sx, sy));
            out_l.set(x, y, nearest(labels, sx, sy));
        }
    }
    Ok((out_i, out_l))
}

/// Samples a transform from `rng` and applies it.
pub fn augment(image: &ImageSlice, labels: &LabelSlice, cfg: &AugmentConfig, rng: &mut Rng) -> Result<(ImageSlice, LabelSlice)> {
    apply(image, labels, &AugmentParams::sample(cfg, rng))
}
