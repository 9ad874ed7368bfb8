//! Per-epoch training records and their CSV form.

use std::path::Path;

use crate::error::{Error, Result};

/// One completed epoch. Dice columns a stage cannot measure are `None`
/// (an empty CSV field).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_dice_prostate: Option<f64>,
    pub val_dice_cg: Option<f64>,
    pub val_dice_pz: Option<f64>,
    pub seconds: f64,
}

pub const LOG_HEADER: [&str; 7] =
    ["epoch", "train_loss", "val_loss", "val_dice_prostate", "val_dice_cg", "val_dice_pz", "seconds"];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// The log with wall-clock times zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> TrainLog {
        TrainLog { records: self.records.iter().map(|r| EpochRecord { seconds: 0.0, ..*r }).collect() }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(LOG_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                opt(r.val_loss),
                opt(r.val_dice_prostate),
                opt(r.val_dice_cg),
                opt(r.val_dice_pz),
                r.seconds.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path)?;
        if rd.headers()?.iter().ne(LOG_HEADER) {
            return Err(Error::invalid(format!("unexpected training log header {:?}", rd.headers()?)));
        }
        let mut records = Vec::new();
        for row in rd.records() {
            let row = row?;
            let num = |i: usize| -> Result<f64> {
                row[i].parse().map_err(|_| Error::invalid(format!("bad {} value {:?}", LOG_HEADER[i], &row[i])))
            };
            let maybe = |i: usize| -> Result<Option<f64>> { if row[i].is_empty() { Ok(None) } else { num(i).map(Some) } };
            records.push(EpochRecord {
                epoch: num(0)? as usize,
                train_loss: num(1)?,
                val_loss: maybe(2)?,
                val_dice_prostate: maybe(3)?,
                val_dice_cg: maybe(4)?,
                val_dice_pz: maybe(5)?,
                seconds: num(6)?,
            });
        }
        Ok(TrainLog { records })
    }
}
