//! Resumable training state.
//!
//! A checkpoint is an MRWT weight file followed by an optimizer section:
//!
//! ```text
//! "OPTS"              4 bytes
//! version             u32 (= 1)
//! epochs completed    u32
//! rng seed            u64
//! rng word position   u128
//! best val loss       f64 (NaN if none)
//! epochs w/o improve  u32
//! parameter count     u32
//! per parameter, in weight-file order:
//!   step count        u64
//!   m, v              f64 x len each
//! log rows            u32, then 7 f64 per row (NaN for an empty field)
//! ```

use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{FormatError, Result};
use crate::model::{with_path, Network, NetworkConfig, WeightFile};
use crate::rng::{Rng, RngState};
use crate::tensor::{Scalar, Tensor};
use crate::train::log::{EpochRecord, TrainLog};

pub const OPTIMIZER_MAGIC: &[u8; 4] = b"OPTS";
pub const OPTIMIZER_VERSION: u32 = 1;

/// Everything needed to continue a stage exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub net: Network<T>,
    pub epochs_done: usize,
    /// Drives the per-epoch shuffles.
    pub rng: Rng,
    pub best_val_loss: Option<f64>,
    pub epochs_without_improvement: usize,
    pub log: TrainLog,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(net: Network<T>, rng: Rng) -> Self {
        TrainState { net, epochs_done: 0, rng, best_val_loss: None, epochs_without_improvement: 0, log: TrainLog::default() }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        WeightFile::from_network(&self.net).encode_into(&mut w);
        w.bytes(OPTIMIZER_MAGIC);
        w.u32(OPTIMIZER_VERSION);
        w.u32(self.epochs_done as u32);
        let RngState { seed, word_pos } = self.rng.state();
        w.u64(seed);
        w.u128(word_pos);
        w.f64(self.best_val_loss.unwrap_or(f64::NAN));
        w.u32(self.epochs_without_improvement as u32);
        let params = self.net.parameters();
        w.u32(params.len() as u32);
        for p in params {
            w.u64(p.step_count);
            for t in [&p.m, &p.v] {
                for v in t.data() {
                    w.f64(v.as_f64());
                }
            }
        }
        w.u32(self.log.records.len() as u32);
        let none = |v: Option<f64>| v.unwrap_or(f64::NAN);
        for r in &self.log.records {
            for v in [
                r.epoch as f64,
                r.train_loss,
                none(r.val_loss),
                none(r.val_dice_prostate),
                none(r.val_dice_cg),
                none(r.val_dice_pz),
                r.seconds,
            ] {
                w.f64(v);
            }
        }
        w.buf
    }

    pub fn decode(bytes: &[u8], config: &NetworkConfig) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        let mut net: Network<T> = WeightFile::decode_from(&mut r)?.into_network(config)?;
        r.magic(OPTIMIZER_MAGIC)?;
        let version = r.u32()?;
        if version != OPTIMIZER_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let epochs_done = r.u32()? as usize;
        let rng = Rng::from_state(RngState { seed: r.u64()?, word_pos: r.u128()? });
        let best = r.f64()?;
        let epochs_without_improvement = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut params = net.parameters_mut();
        if count != params.len() {
            return Err(FormatError::Malformed(format!("optimizer state for {count} parameters, model has {}", params.len())));
        }
        for p in params.iter_mut() {
            p.step_count = r.u64()?;
            let shape = p.value.shape().to_vec();
            let to_t = |vals: Vec<f64>| Tensor::from_f64(&shape, &vals).map_err(|e| FormatError::Malformed(e.to_string()));
            p.m = to_t(r.f64s(p.len())?)?;
            p.v = to_t(r.f64s(p.len())?)?;
        }
        let rows = r.u32()? as usize;
        r.require(rows, 56)?;
        let some = |v: f64| (!v.is_nan()).then_some(v);
        let mut log = TrainLog::default();
        for _ in 0..rows {
            let v = r.f64s(7)?;
            log.records.push(EpochRecord {
                epoch: v[0] as usize,
                train_loss: v[1],
                val_loss: some(v[2]),
                val_dice_prostate: some(v[3]),
                val_dice_cg: some(v[4]),
                val_dice_pz: some(v[5]),
                seconds: v[6],
            });
        }
        if r.remaining() != 0 {
            return Err(FormatError::Malformed(format!("{} trailing bytes", r.remaining())));
        }
        Ok(TrainState { net, epochs_done, rng, best_val_loss: some(best), epochs_without_improvement, log })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        // write-then-rename so an interrupted save never leaves a torn file
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.encode())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, config: &NetworkConfig) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        with_path(path, Self::decode(&bytes, config))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{adam_step, AdamConfig};

    #[test]
    fn round_trip_preserves_everything() {
        let cfg = NetworkConfig::mres(1).with_size(1, 2);
        let mut net = Network::<f32>::build(&cfg, &mut Rng::new(1)).unwrap();
        for p in net.parameters_mut() {
            p.grad.fill(0.25);
        }
        adam_step(net.parameters_mut(), &AdamConfig::default()).unwrap();
        let mut rng = Rng::new(9);
        rng.next_u64();
        let mut st = TrainState::new(net, rng);
        st.epochs_done = 3;
        st.best_val_loss = Some(0.5);
        st.log.records.push(EpochRecord { epoch: 1, train_loss: 0.7, val_loss: None, val_dice_prostate: Some(0.1), val_dice_cg: None, val_dice_pz: None, seconds: 0.2 });
        let bytes = st.encode();
        let back = TrainState::<f32>::decode(&bytes, &cfg).unwrap();
        assert_eq!(back.encode(), bytes);
        assert_eq!(back.rng.state(), st.rng.state());
        assert_eq!(back.log, st.log);
        assert_eq!(back.net.parameters()[0], st.net.parameters()[0]);
    }

    #[test]
    fn corrupted_checkpoint_rejected() {
        let cfg = NetworkConfig::mres(1).with_size(1, 2);
        let st = TrainState::new(Network::<f64>::build(&cfg, &mut Rng::new(1)).unwrap(), Rng::new(0));
        let bytes = st.encode();
        assert!(matches!(TrainState::<f64>::decode(&bytes[..bytes.len() - 1], &cfg), Err(FormatError::Truncated { .. })));
        let mut bad = bytes.clone();
        let at = bytes.windows(4).position(|w| w == OPTIMIZER_MAGIC).unwrap();
        bad[at] = b'X';
        assert!(matches!(TrainState::<f64>::decode(&bad, &cfg), Err(FormatError::BadMagic { .. })));
        let other = NetworkConfig::mres(2).with_size(1, 2);
        assert_eq!(TrainState::<f64>::decode(&bytes, &other).unwrap_err(), FormatError::FingerprintMismatch);
    }
}
