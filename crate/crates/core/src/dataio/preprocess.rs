//! Cropping and intensity normalization.

use log::debug;

use crate::dataio::volume::{Plane, Volume};
use crate::error::{Error, Result};

/// Standard deviations below this are treated as a constant slice.
pub const MIN_STD: f64 = 1e-8;

/// In-plane offset of a centered `target` window. Odd margins put the extra
/// row/column on the high-index side, where it is dropped.
pub fn crop_offset(size: usize, target: usize) -> Result<usize> {
    if size < target {
        return Err(Error::shape(format!("cannot crop {size} to {target}: input is smaller than the target")));
    }
    Ok((size - target) / 2)
}

pub fn center_crop<T: Copy + Default>(plane: &Plane<T>, tx: usize, ty: usize) -> Result<Plane<T>> {
    let (ox, oy) = (crop_offset(plane.nx, tx)?, crop_offset(plane.ny, ty)?);
    let mut data = Vec::with_capacity(tx * ty);
    for y in oy..oy + ty {
        data.extend_from_slice(&plane.data[y * plane.nx + ox..y * plane.nx + ox + tx]);
    }
    Plane::new(tx, ty, data)
}

/// Crops every axial slice of a volume.
pub fn center_crop_volume<T: Copy + Default>(v: &Volume<T>, tx: usize, ty: usize) -> Result<Volume<T>> {
    let planes = (0..v.dims[2]).map(|z| center_crop(&v.slice(z), tx, ty)).collect::<Result<Vec<_>>>()?;
    Volume::from_slices(v.spacing, &planes)
}

/// Inverse of [`center_crop`]: places `plane` into a `nx x ny` canvas filled
/// with `fill`.
pub fn uncrop<T: Copy + Default>(plane: &Plane<T>, nx: usize, ny: usize, fill: T) -> Result<Plane<T>> {
    let (ox, oy) = (crop_offset(nx, plane.nx)?, crop_offset(ny, plane.ny)?);
    let mut out = Plane::filled(nx, ny, fill);
    for y in 0..plane.ny {
        let dst = (y + oy) * nx + ox;
        out.data[dst..dst + plane.nx].copy_from_slice(&plane.data[y * plane.nx..(y + 1) * plane.nx]);
    }
    Ok(out)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Zero mean, unit standard deviation. A (near-)constant slice becomes all
/// zeros; that is logged rather than treated as an error.
pub fn znormalize(plane: &Plane<f64>) -> Plane<f64> {
    let (mean, std) = mean_std(&plane.data);
    if std < MIN_STD {
        debug!("constant {}x{} slice normalized to zeros", plane.nx, plane.ny);
        return Plane::filled(plane.nx, plane.ny, 0.0);
    }
    Plane { nx: plane.nx, ny: plane.ny, data: plane.data.iter().map(|v| (v - mean) / std).collect() }
}

/// Normalization scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormScope {
    Slice,
    Volume,
}

pub fn znormalize_volume(v: &Volume<f64>, scope: NormScope) -> Result<Volume<f64>> {
    match scope {
        NormScope::Slice => {
            let planes: Vec<_> = (0..v.dims[2]).map(|z| znormalize(&v.slice(z))).collect();
            Volume::from_slices(v.spacing, &planes)
        }
        NormScope::Volume => {
            let p = znormalize(&Plane { nx: v.len(), ny: 1, data: v.data.clone() });
            Volume::new(v.dims, v.spacing, p.data)
        }
    }
}
