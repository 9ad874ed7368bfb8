//! Volumes, axial slices and the MVOL file format.
//!
//! MVOL layout, all little-endian:
//!
//! ```text
//! "MVOL"        4 bytes
//! version       u32 (= 1)
//! dtype         u8  (0 = f64 intensity, 1 = u8 label)
//! dims          u32 x 3 (nx, ny, nz)
//! spacing       f64 x 3 (mm)
//! payload       nx*ny*nz values, x fastest, then y, then z
//! ```

use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{Error, FormatError, Result};
use crate::model::with_path;

pub const MVOL_MAGIC: &[u8; 4] = b"MVOL";
pub const MVOL_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 12 + 24;

/// Label codes of a [`LabelVolume`].
pub const BACKGROUND: u8 = 0;
pub const CENTRAL_GLAND: u8 = 1;
pub const PERIPHERAL_ZONE: u8 = 2;

/// A 3D grid of voxels with physical spacing in mm. Index `(x, y, z)` lives
/// at `x + nx * (y + ny * z)`; the third axis is axial.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub data: Vec<T>,
}

/// Intensity volume.
pub type Volume3D = Volume<f64>;
/// Labels in {background, central gland, peripheral zone}.
pub type LabelVolume = Volume<u8>;

/// A 2D image, `x` fastest. Maps onto an `H x W` tensor plane with
/// `H = ny`, `W = nx` without reordering.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<T>,
}

pub type ImageSlice = Plane<f64>;
pub type LabelSlice = Plane<u8>;

impl<T: Copy + Default> Plane<T> {
    pub fn new(nx: usize, ny: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != nx * ny {
            return Err(Error::shape(format!("{nx}x{ny} plane needs {} values, got {}", nx * ny, data.len())));
        }
        Ok(Plane { nx, ny, data })
    }

    pub fn filled(nx: usize, ny: usize, value: T) -> Self {
        Plane { nx, ny, data: vec![value; nx * ny] }
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.nx + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.nx + x] = v;
    }

    pub fn same_dims<U>(&self, other: &Plane<U>) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }
}

impl<T: Copy + Default> Volume<T> {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<T>) -> Result<Self> {
        let n = dims.iter().product::<usize>();
        if data.len() != n {
            return Err(Error::shape(format!("volume {dims:?} needs {n} values, got {}", data.len())));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!("voxel spacing must be positive, got {spacing:?}")));
        }
        Ok(Volume { dims, spacing, data })
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: T) -> Self {
        Volume { dims, spacing, data: vec![value; dims.iter().product()] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.index(x, y, z)]
    }

    /// Voxel volume in mm^3.
    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn slice(&self, z: usize) -> Plane<T> {
        let n = self.dims[0] * self.dims[1];
        Plane { nx: self.dims[0], ny: self.dims[1], data: self.data[z * n..(z + 1) * n].to_vec() }
    }

    pub fn set_slice(&mut self, z: usize, plane: &Plane<T>) -> Result<()> {
        if plane.nx != self.dims[0] || plane.ny != self.dims[1] {
            return Err(Error::shape(format!(
                "slice {}x{} does not fit volume {:?}",
                plane.nx, plane.ny, self.dims
            )));
        }
        let n = plane.data.len();
        self.data[z * n..(z + 1) * n].copy_from_slice(&plane.data);
        Ok(())
    }

    /// Builds a volume by stacking equally sized planes along the axial axis.
    pub fn from_slices(spacing: [f64; 3], planes: &[Plane<T>]) -> Result<Self> {
        let first = planes.first().ok_or_else(|| Error::invalid("cannot stack zero slices"))?;
        let mut data = Vec::with_capacity(first.data.len() * planes.len());
        for (z, p) in planes.iter().enumerate() {
            if !p.same_dims(first) {
                return Err(Error::shape(format!("slice {z} is {}x{}, expected {}x{}", p.nx, p.ny, first.nx, first.ny)));
            }
            data.extend_from_slice(&p.data);
        }
        Volume::new([first.nx, first.ny, planes.len()], spacing, data)
    }
}

impl LabelVolume {
    /// Voxels labelled central gland or peripheral zone.
    pub fn prostate_voxels(&self) -> usize {
        self.data.iter().filter(|&&l| l != BACKGROUND).count()
    }
}

/// Element types that MVOL can store: `f64` intensities and `u8` labels.
pub trait MvolElement: Copy + Default + codec::Codec {}

impl MvolElement for f64 {}
impl MvolElement for u8 {}

mod codec {
    use super::PERIPHERAL_ZONE;

    pub trait Codec: Sized {
        const DTYPE: u8;
        const WIDTH: usize;
        fn put(self, out: &mut Vec<u8>);
        /// `bytes` holds exactly `WIDTH` bytes.
        fn get(bytes: &[u8]) -> Self;
        fn validate(self) -> bool;
    }

    impl Codec for f64 {
        const DTYPE: u8 = 0;
        const WIDTH: usize = 8;
        fn put(self, out: &mut Vec<u8>) {
            out.extend_from_slice(&self.to_le_bytes())
        }
        fn get(bytes: &[u8]) -> Self {
            f64::from_le_bytes(bytes.try_into().unwrap())
        }
        fn validate(self) -> bool {
            self.is_finite()
        }
    }

    impl Codec for u8 {
        const DTYPE: u8 = 1;
        const WIDTH: usize = 1;
        fn put(self, out: &mut Vec<u8>) {
            out.push(self)
        }
        fn get(bytes: &[u8]) -> Self {
            bytes[0]
        }
        fn validate(self) -> bool {
            self <= PERIPHERAL_ZONE
        }
    }
}

/// Contents of an MVOL file of either dtype.
#[derive(Debug, Clone, PartialEq)]
pub enum MvolData {
    Intensity(Volume3D),
    Labels(LabelVolume),
}

impl<T: MvolElement> Volume<T> {
    pub fn encode_mvol(&self) -> Vec<u8> {
        let mut w = Writer { buf: Vec::with_capacity(HEADER_LEN + T::WIDTH * self.data.len()) };
        w.bytes(MVOL_MAGIC);
        w.u32(MVOL_VERSION);
        w.u8(T::DTYPE);
        for d in self.dims {
            w.u32(d as u32);
        }
        for s in self.spacing {
            w.f64(s);
        }
        for &v in &self.data {
            v.put(&mut w.buf);
        }
        w.buf
    }
}

fn decode_payload<T: MvolElement>(r: &mut Reader<'_>, dims: [usize; 3], spacing: [f64; 3]) -> Result<Volume<T>, FormatError> {
    let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| FormatError::Malformed("dims overflow".into()))?;
    r.require(n, T::WIDTH)?;
    let data: Vec<T> = r.take(n * T::WIDTH)?.chunks_exact(T::WIDTH).map(T::get).collect();
    if let Some(i) = data.iter().position(|v| !v.validate()) {
        return Err(FormatError::Malformed(format!("invalid value at voxel {i}")));
    }
    Volume::new(dims, spacing, data).map_err(|e| FormatError::Malformed(e.to_string()))
}

pub fn decode_mvol(bytes: &[u8]) -> Result<MvolData, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(MVOL_MAGIC)?;
    let version = r.u32()?;
    if version != MVOL_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let dtype = r.u8()?;
    if dtype > 1 {
        return Err(FormatError::BadDtype(dtype));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let mut spacing = [0.0; 3];
    for s in &mut spacing {
        *s = r.f64()?;
    }
    let out = if dtype == 0 {
        MvolData::Intensity(decode_payload(&mut r, dims, spacing)?)
    } else {
        MvolData::Labels(decode_payload(&mut r, dims, spacing)?)
    };
    if r.remaining() != 0 {
        return Err(FormatError::Malformed(format!("{} trailing bytes", r.remaining())));
    }
    Ok(out)
}

pub fn read_mvol(path: impl AsRef<Path>) -> Result<MvolData> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    with_path(path, decode_mvol(&bytes))
}

pub fn write_mvol<T: MvolElement>(volume: &Volume<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, volume.encode_mvol())?;
    Ok(())
}

/// Reads an intensity (dtype 0) volume.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    match read_mvol(path)? {
        MvolData::Intensity(v) => Ok(v),
        MvolData::Labels(_) => with_path(path, Err(FormatError::Malformed("expected an intensity volume, found labels".into()))),
    }
}

/// Reads a label (dtype 1) volume.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    match read_mvol(path)? {
        MvolData::Labels(v) => Ok(v),
        MvolData::Intensity(_) => with_path(path, Err(FormatError::Malformed("expected a label volume, found intensities".into()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_both_dtypes() {
        let v = Volume3D::new([3, 2, 2], [1.0, 0.5, 2.0], (0..12).map(|i| i as f64 * 0.1 - 0.3).collect()).unwrap();
        assert_eq!(decode_mvol(&v.encode_mvol()).unwrap(), MvolData::Intensity(v.clone()));
        let l = LabelVolume::new([3, 2, 2], [1.0; 3], (0..12).map(|i| (i % 3) as u8).collect()).unwrap();
        assert_eq!(decode_mvol(&l.encode_mvol()).unwrap(), MvolData::Labels(l));
    }

    #[test]
    fn distinct_errors() {
        let v = Volume3D::filled([2, 2, 2], [1.0; 3], 1.5);
        let bytes = v.encode_mvol();
        let mut m = bytes.clone();
        m[3] = b'X';
        assert!(matches!(decode_mvol(&m), Err(FormatError::BadMagic { .. })));
        let mut ver = bytes.clone();
        ver[4] = 2;
        assert_eq!(decode_mvol(&ver), Err(FormatError::UnsupportedVersion(2)));
        let mut dt = bytes.clone();
        dt[8] = 7;
        assert_eq!(decode_mvol(&dt), Err(FormatError::BadDtype(7)));
        assert_eq!(
            decode_mvol(&bytes[..bytes.len() - 5]),
            Err(FormatError::Truncated { expected: bytes.len() as u64, actual: bytes.len() as u64 - 5 })
        );
    }

    #[test]
    fn out_of_range_label_rejected() {
        let mut bytes = LabelVolume::filled([1, 1, 2], [1.0; 3], 0).encode_mvol();
        *bytes.last_mut().unwrap() = 3;
        assert!(matches!(decode_mvol(&bytes), Err(FormatError::Malformed(_))));
    }

    #[test]
    fn slices_follow_third_axis() {
        let v = Volume::<u8>::new([2, 2, 3], [1.0; 3], (0..12).collect()).unwrap();
        assert_eq!(v.slice(1).data, vec![4, 5, 6, 7]);
        assert_eq!(v.get(1, 0, 2), 9);
        let planes: Vec<_> = (0..3).map(|z| v.slice(z)).collect();
        assert_eq!(Volume::from_slices([1.0; 3], &planes).unwrap(), v);
    }
}
