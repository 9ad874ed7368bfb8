//! Synthetic prostate phantoms with exact labels.
//!
//! A phantom is an elliptical body cross-section (extruded along the axial
//! axis) containing an ellipsoidal prostate. The central gland is the
//! prostate ellipsoid scaled by `f^(1/3)` (so it holds a fraction `f` of the
//! volume) and shifted anteriorly (towards low `y`) by a fraction of the
//! anterior-posterior semi-axis. It lies strictly inside the prostate
//! whenever `f^(1/3) + offset < 1`. Region means are multiplied by a smooth
//! low-order bias field before Gaussian noise is added.

use crate::dataio::volume::{LabelVolume, Volume, Volume3D, BACKGROUND, CENTRAL_GLAND, PERIPHERAL_ZONE};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Ranges of the prostate semi-axes (x, y, z) in mm.
    pub semi_axes_mm: [(f64, f64); 3],
    /// Maximum shift of the prostate center from the grid center, per axis, in mm.
    pub center_jitter_mm: f64,
    /// Range of the central-gland share of the prostate volume.
    pub cg_fraction: (f64, f64),
    /// Range of the anterior CG shift as a fraction of the y semi-axis.
    pub cg_offset: (f64, f64),
    /// In-plane semi-axes of the body ellipse in mm.
    pub body_semi_axes_mm: (f64, f64),
    pub air_intensity: f64,
    pub tissue_intensity: f64,
    pub cg_intensity: f64,
    pub pz_intensity: f64,
    pub noise_sigma: f64,
    pub bias_amplitude: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [64, 64, 32],
            spacing: [1.0; 3],
            semi_axes_mm: [(11.0, 16.0), (8.0, 12.0), (6.0, 10.0)],
            center_jitter_mm: 3.0,
            cg_fraction: (0.25, 0.45),
            cg_offset: (0.08, 0.18),
            body_semi_axes_mm: (29.0, 23.0),
            air_intensity: 0.0,
            tissue_intensity: 0.35,
            cg_intensity: 0.6,
            pz_intensity: 0.95,
            noise_sigma: 0.04,
            bias_amplitude: 0.1,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn with_dims(mut self, dims: [usize; 3]) -> Self {
        self.dims = dims;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.dims.contains(&0) {
            return bad(format!("phantom dims must be positive, got {:?}", self.dims));
        }
        // written so that NaN is rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if self.spacing.iter().any(|&s| !(s > 0.0)) {
            return bad(format!("phantom spacing must be positive, got {:?}", self.spacing));
        }
        for (axis, &(lo, hi)) in self.semi_axes_mm.iter().enumerate() {
            if !(lo > 0.0 && lo <= hi) {
                return bad(format!("semi-axis range {axis} must satisfy 0 < lo <= hi, got ({lo}, {hi})"));
            }
            let half = self.dims[axis] as f64 * self.spacing[axis] / 2.0;
            if hi + self.center_jitter_mm >= half {
                return bad(format!("prostate semi-axis {hi} mm plus jitter does not fit axis {axis} ({half} mm half-width)"));
            }
        }
        let (f_lo, f_hi) = self.cg_fraction;
        let (d_lo, d_hi) = self.cg_offset;
        if !(f_lo > 0.0 && f_lo <= f_hi && f_hi < 1.0) || !(d_lo >= 0.0 && d_lo <= d_hi) {
            return bad(format!("invalid CG ranges: fraction {:?}, offset {:?}", self.cg_fraction, self.cg_offset));
        }
        if f_hi.cbrt() + d_hi >= 1.0 {
            return bad(format!(
                "central gland not interior: scale {:.3} + offset {d_hi} >= 1",
                f_hi.cbrt()
            ));
        }
        if self.noise_sigma < 0.0 || self.bias_amplitude < 0.0 {
            return bad("noise sigma and bias amplitude must be non-negative".into());
        }
        Ok(())
    }
}

/// Geometry drawn for one phantom, in mm relative to the grid center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomGeometry {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    pub cg_scale: f64,
    pub cg_offset_mm: f64,
}

impl PhantomGeometry {
    /// Analytic prostate volume in mL.
    pub fn prostate_ml(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.semi_axes.iter().product::<f64>() / 1000.0
    }
}

fn draw(range: (f64, f64), rng: &mut Rng) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.uniform_range(range.0, range.1)
    }
}

/// Draws one phantom; rejects specs whose central gland could leave the prostate.
pub fn generate_phantom(spec: &PhantomSpec, rng: &mut Rng) -> Result<(Volume3D, LabelVolume, PhantomGeometry)> {
    spec.validate()?;
    let semi_axes = [0, 1, 2].map(|i| draw(spec.semi_axes_mm[i], rng));
    let j = spec.center_jitter_mm;
    let center = [0, 1, 2].map(|_| draw((-j, j), rng));
    let cg_scale = draw(spec.cg_fraction, rng).cbrt();
    let cg_offset_mm = draw(spec.cg_offset, rng) * semi_axes[1];
    let bias: [f64; 4] = [0, 1, 2, 3].map(|_| rng.uniform_range(-1.0, 1.0));
    let geom = PhantomGeometry { center, semi_axes, cg_scale, cg_offset_mm };

    let [nx, ny, nz] = spec.dims;
    let mut image = Volume::filled(spec.dims, spec.spacing, 0.0);
    let mut labels = Volume::filled(spec.dims, spec.spacing, BACKGROUND);
    let pos = |i: usize, axis: usize| (i as f64 - (spec.dims[axis] as f64 - 1.0) / 2.0) * spec.spacing[axis];
    let half = [0, 1, 2].map(|a| spec.dims[a] as f64 * spec.spacing[a] / 2.0);
    let (bx, by) = spec.body_semi_axes_mm;
    let mut i = 0;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = [pos(x, 0), pos(y, 1), pos(z, 2)];
                let q = |k: usize, c: f64, s: f64| ((p[k] - c) / s).powi(2);
                let in_prostate = (0..3).map(|k| q(k, center[k], semi_axes[k])).sum::<f64>() <= 1.0;
                let cg_center = [center[0], center[1] - cg_offset_mm, center[2]];
                let in_cg = (0..3).map(|k| q(k, cg_center[k], cg_scale * semi_axes[k])).sum::<f64>() <= 1.0;
                let in_body = (p[0] / bx).powi(2) + (p[1] / by).powi(2) <= 1.0;
                let (label, mean) = if in_prostate && in_cg {
                    (CENTRAL_GLAND, spec.cg_intensity)
                } else if in_prostate {
                    (PERIPHERAL_ZONE, spec.pz_intensity)
                } else if in_body {
                    (BACKGROUND, spec.tissue_intensity)
                } else {
                    (BACKGROUND, spec.air_intensity)
                };
                let (u, v, w) = (p[0] / half[0], p[1] / half[1], p[2] / half[2]);
                let field = 1.0 + spec.bias_amplitude * (bias[0] * u + bias[1] * v + bias[2] * u * v + bias[3] * w) / 4.0;
                let noise = if spec.noise_sigma > 0.0 { spec.noise_sigma * rng.normal() } else { 0.0 };
                image.data[i] = mean * field + noise;
                labels.data[i] = label;
                i += 1;
            }
        }
    }
    Ok((image, labels, geom))
}
