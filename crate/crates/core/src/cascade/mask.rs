//! Binary masks and the set algebra of the cascade.

use std::collections::VecDeque;

use crate::dataio::{LabelVolume, Plane, Volume, BACKGROUND, CENTRAL_GLAND, PERIPHERAL_ZONE};
use crate::error::{Error, Result};

pub type BinaryMask2D = Plane<bool>;
/// A 3D mask carrying voxel spacing in mm.
pub type BinaryMask3D = Volume<bool>;

pub fn count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&b| b).count()
}

fn check_len(a: &[bool], b: &[bool], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("{what}: masks of {} and {} elements", a.len(), b.len())));
    }
    Ok(())
}

/// `prostate AND NOT central_gland`, elementwise.
pub fn exclusion(prostate: &[bool], central_gland: &[bool]) -> Result<Vec<bool>> {
    check_len(prostate, central_gland, "peripheral zone")?;
    Ok(prostate.iter().zip(central_gland).map(|(&p, &c)| p && !c).collect())
}

/// Peripheral zone as the prostate with the central gland excluded.
pub fn derive_peripheral_zone(prostate: &BinaryMask2D, central_gland: &BinaryMask2D) -> Result<BinaryMask2D> {
    if !prostate.same_dims(central_gland) {
        return Err(Error::shape(format!(
            "prostate {}x{} and central gland {}x{} differ",
            prostate.nx, prostate.ny, central_gland.nx, central_gland.ny
        )));
    }
    Plane::new(prostate.nx, prostate.ny, exclusion(&prostate.data, &central_gland.data)?)
}

pub fn derive_peripheral_zone_3d(prostate: &BinaryMask3D, central_gland: &BinaryMask3D) -> Result<BinaryMask3D> {
    if prostate.dims != central_gland.dims {
        return Err(Error::shape(format!(
            "prostate {:?} and central gland {:?} differ",
            prostate.dims, central_gland.dims
        )));
    }
    Volume::new(prostate.dims, prostate.spacing, exclusion(&prostate.data, &central_gland.data)?)
}

/// Label of one pixel: 1 for central gland inside the prostate, 2 for the
/// rest of the prostate, 0 elsewhere. CG outside the prostate is dropped.
pub fn compose_label(prostate: bool, central_gland: bool) -> u8 {
    match (prostate, central_gland) {
        (false, _) => BACKGROUND,
        (true, true) => CENTRAL_GLAND,
        (true, false) => PERIPHERAL_ZONE,
    }
}

pub fn compose_labels(prostate: &[bool], central_gland: &[bool]) -> Result<Vec<u8>> {
    check_len(prostate, central_gland, "label composition")?;
    Ok(prostate.iter().zip(central_gland).map(|(&p, &c)| compose_label(p, c)).collect())
}

/// The three structures scored by the evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Structure {
    Prostate,
    CentralGland,
    PeripheralZone,
}

impl Structure {
    pub const ALL: [Structure; 3] = [Structure::Prostate, Structure::CentralGland, Structure::PeripheralZone];

    pub fn name(self) -> &'static str {
        match self {
            Structure::Prostate => "prostate",
            Structure::CentralGland => "cg",
            Structure::PeripheralZone => "pz",
        }
    }

    pub fn contains(self, label: u8) -> bool {
        match self {
            Structure::Prostate => label != BACKGROUND,
            Structure::CentralGland => label == CENTRAL_GLAND,
            Structure::PeripheralZone => label == PERIPHERAL_ZONE,
        }
    }

    pub fn mask(self, labels: &LabelVolume) -> BinaryMask3D {
        Volume { dims: labels.dims, spacing: labels.spacing, data: labels.data.iter().map(|&l| self.contains(l)).collect() }
    }
}

/// Keeps the largest 6-connected component. Ties go to the component whose
/// first voxel (in storage order) comes first. Empty masks are returned as is.
pub fn largest_component(mask: &BinaryMask3D) -> BinaryMask3D {
    let [nx, ny, nz] = mask.dims;
    let mut component = vec![usize::MAX; mask.len()];
    let (mut best, mut best_size, mut next) = (usize::MAX, 0, 0);
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask.data[start] || component[start] != usize::MAX {
            continue;
        }
        component[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
            let mut visit = |j: usize| {
                if mask.data[j] && component[j] == usize::MAX {
                    component[j] = next;
                    queue.push_back(j);
                }
            };
            if x > 0 { visit(i - 1) }
            if x + 1 < nx { visit(i + 1) }
            if y > 0 { visit(i - nx) }
            if y + 1 < ny { visit(i + nx) }
            if z > 0 { visit(i - nx * ny) }
            if z + 1 < nz { visit(i + nx * ny) }
        }
        if size > best_size {
            best = next;
            best_size = size;
        }
        next += 1;
    }
    Volume { dims: mask.dims, spacing: mask.spacing, data: component.iter().map(|&c| c == best && best != usize::MAX).collect() }
}
