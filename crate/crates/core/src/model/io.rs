//! MRWT weight files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "MRWT"            4 bytes
//! version           u32 (= 1)
//! fingerprint       32 bytes, SHA-256 of the canonical architecture string
//! count             u32
//! count entries:
//!   name length     u16
//!   name            UTF-8
//!   rank            u8
//!   dims            u32 x rank
//!   values          f64 x product(dims)
//! ```
//!
//! Trainable parameters come first in canonical order, followed by the
//! normalization running statistics (`<layer>.running_mean`,
//! `<layer>.running_var`).

use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{Error, FormatError, Result};
use crate::model::{Network, NetworkConfig};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"MRWT";
pub const WEIGHTS_VERSION: u32 = 1;

/// One named array of a weight file.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

/// Decoded contents of a weight file, before it is bound to a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub fingerprint: [u8; 32],
    pub entries: Vec<WeightEntry>,
}

impl WeightFile {
    pub fn from_network<T: Scalar>(net: &Network<T>) -> Self {
        let mut entries: Vec<WeightEntry> = net
            .parameters()
            .into_iter()
            .map(|p| WeightEntry {
                name: p.name.clone(),
                dims: p.value.shape().to_vec(),
                values: p.value.data().iter().map(|v| v.as_f64()).collect(),
            })
            .collect();
        for (name, stats) in net.running_stats() {
            for (suffix, t) in [("running_mean", &stats.mean), ("running_var", &stats.var)] {
                entries.push(WeightEntry {
                    name: format!("{name}.{suffix}"),
                    dims: t.shape().to_vec(),
                    values: t.data().iter().map(|v| v.as_f64()).collect(),
                });
            }
        }
        WeightFile { fingerprint: net.fingerprint(), entries }
    }

    pub(crate) fn encode_into(&self, w: &mut Writer) {
        w.bytes(WEIGHTS_MAGIC);
        w.u32(WEIGHTS_VERSION);
        w.bytes(&self.fingerprint);
        w.u32(self.entries.len() as u32);
        for e in &self.entries {
            w.u16(e.name.len() as u16);
            w.bytes(e.name.as_bytes());
            w.u8(e.dims.len() as u8);
            for &d in &e.dims {
                w.u32(d as u32);
            }
            for &v in &e.values {
                w.f64(v);
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        self.encode_into(&mut w);
        w.buf
    }

    pub(crate) fn decode_from(r: &mut Reader<'_>) -> Result<Self, FormatError> {
        r.magic(WEIGHTS_MAGIC)?;
        let version = r.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let fingerprint: [u8; 32] = r.take(32)?.try_into().unwrap();
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| FormatError::Malformed("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.u8()? as usize;
            let dims: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_, _>>()?;
            let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let n = n.ok_or_else(|| FormatError::Malformed(format!("dims of {name} overflow")))?;
            let values = r.f64s(n)?;
            entries.push(WeightEntry { name, dims, values });
        }
        Ok(WeightFile { fingerprint, entries })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        let file = Self::decode_from(&mut r)?;
        if r.remaining() != 0 {
            return Err(FormatError::Malformed(format!("{} trailing bytes", r.remaining())));
        }
        Ok(file)
    }

    /// Materializes the network for `config`, which must carry the same
    /// fingerprint and exactly the same named arrays.
    pub fn into_network<T: Scalar>(self, config: &NetworkConfig) -> Result<Network<T>, FormatError> {
        if self.fingerprint != config.fingerprint() {
            return Err(FormatError::FingerprintMismatch);
        }
        let mut net = Network::<T>::build(config, &mut Rng::new(0))
            .map_err(|e| FormatError::Malformed(e.to_string()))?;
        let mut entries = self.entries.into_iter();
        let mut bind = |name: &str, slot: &mut Tensor<T>| -> Result<(), FormatError> {
            let e = entries
                .next()
                .ok_or_else(|| FormatError::Malformed(format!("missing entry {name}")))?;
            if e.name != name || e.dims != slot.shape() {
                return Err(FormatError::Malformed(format!(
                    "expected {name} {:?}, found {} {:?}",
                    slot.shape(),
                    e.name,
                    e.dims
                )));
            }
            *slot = Tensor::from_f64(&e.dims, &e.values).map_err(|e| FormatError::Malformed(e.to_string()))?;
            Ok(())
        };
        for p in net.parameters_mut() {
            let name = p.name.clone();
            bind(&name, &mut p.value)?;
        }
        for (name, stats) in net.running_stats_mut() {
            bind(&format!("{name}.running_mean"), &mut stats.mean)?;
            bind(&format!("{name}.running_var"), &mut stats.var)?;
        }
        if let Some(extra) = entries.next() {
            return Err(FormatError::Malformed(format!("unexpected entry {}", extra.name)));
        }
        Ok(net)
    }
}

pub(crate) fn with_path<T>(path: &Path, r: Result<T, FormatError>) -> Result<T> {
    r.map_err(|source| Error::Format { path: path.to_path_buf(), source })
}

pub fn save_weights<T: Scalar>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, WeightFile::from_network(net).encode())?;
    Ok(())
}

pub fn load_weights<T: Scalar>(path: impl AsRef<Path>, config: &NetworkConfig) -> Result<Network<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    with_path(path, WeightFile::decode(&bytes).and_then(|f| f.into_network(config)))
}
