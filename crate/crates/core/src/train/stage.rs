//! The single-stage training loop.

use std::path::Path;
use std::time::Instant;

use log::info;

use crate::cascade::{compose_labels, make_stage2_batch, CascadeVariant, Structure};
use crate::dataio::{apply_augmentation, AugmentParams, Plane};
use crate::error::{Error, Result};
use crate::metrics::{confusion_slices, mean_sd};
use crate::model::Network;
use crate::ops;
use crate::optim::{adam_step, AdamConfig};
use crate::tensor::{Scalar, Tensor};
use crate::train::checkpoint::TrainState;
use crate::train::log::EpochRecord;
use crate::train::TrainingConfig;

/// What a stage learns to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    /// Image -> prostate.
    Prostate,
    /// Stage-2 input of the variant -> central gland.
    CentralGland(CascadeVariant),
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::Prostate => "stage1",
            StageKind::CentralGland(_) => "stage2",
        }
    }

    fn target(self, label: u8) -> bool {
        match self {
            StageKind::Prostate => Structure::Prostate.contains(label),
            StageKind::CentralGland(_) => Structure::CentralGland.contains(label),
        }
    }
}

/// One preprocessed axial slice. `condition` is the prostate mask that
/// conditions stage 2 (unused by stage 1).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub subject: usize,
    pub image: Plane<f64>,
    pub labels: Plane<u8>,
    pub condition: Option<Plane<bool>>,
}

struct Batch<T> {
    input: Tensor<T>,
    one_hot: Tensor<T>,
}

/// Assembles network inputs and one-hot targets, optionally augmenting each
/// sample with its own stream. Image, labels and condition share the
/// transform; labels and condition are packed into one nearest-sampled plane.
fn assemble<T: Scalar>(
    samples: &[&TrainSample],
    kind: StageKind,
    augment: Option<(&TrainingConfig, usize)>,
    indices: &[usize],
) -> Result<Batch<T>> {
    let first = samples.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let (w, h) = (first.image.nx, first.image.ny);
    let mut images = Vec::with_capacity(samples.len() * w * h);
    let mut targets = Vec::with_capacity(samples.len() * w * h);
    let mut conds = Vec::with_capacity(samples.len() * w * h);
    for (s, &idx) in samples.iter().zip(indices) {
        if s.image.nx != w || s.image.ny != h {
            return Err(Error::shape(format!("batch mixes {}x{} and {w}x{h} slices", s.image.nx, s.image.ny)));
        }
        let cond = s.condition.as_ref();
        if matches!(kind, StageKind::CentralGland(_)) && cond.is_none() {
            return Err(Error::invalid("stage-2 sample without a conditioning mask"));
        }
        let packed = Plane {
            nx: w,
            ny: h,
            data: (0..w * h)
                .map(|i| kind.target(s.labels.data[i]) as u8 | (cond.is_some_and(|c| c.data[i]) as u8) << 1)
                .collect(),
        };
        let (img, packed) = match augment {
            Some((cfg, epoch)) => {
                let mut rng = crate::rng::Rng::new(cfg.seed).derive(&format!("augment-{}", kind.name()), ((epoch as u64) << 32) | idx as u64);
                let p = AugmentParams::sample(&cfg.augmentation, &mut rng);
                apply_augmentation(&s.image, &packed, &p)?
            }
            None => (s.image.clone(), packed),
        };
        images.extend(img.data.iter().map(|&v| T::from_f64_lossy(v)));
        targets.extend(packed.data.iter().map(|&p| p & 1));
        conds.extend(packed.data.iter().map(|&p| p & 2 != 0));
    }
    let n = samples.len();
    let images = Tensor::new(vec![n, 1, h, w], images)?;
    let input = match kind {
        StageKind::Prostate => images,
        StageKind::CentralGland(v) => make_stage2_batch(&images, &conds, v)?,
    };
    Ok(Batch { input, one_hot: ops::one_hot(&targets, n, 2, h, w)? })
}

/// Validation loss and per-subject Dice of `net` on `val`.
///
/// Stage 1 reports prostate Dice. Stage 2 composes its CG prediction with
/// the conditioning mask, as the cascade does at inference, and reports all
/// three structures.
pub fn validate<T: Scalar>(net: &Network<T>, kind: StageKind, val: &[TrainSample]) -> Result<(f64, [Option<f64>; 3])> {
    const CHUNK: usize = 16;
    let mut loss_sum = 0.0;
    let subjects = val.iter().map(|s| s.subject).max().map_or(0, |m| m + 1);
    let mut per_subject: Vec<[[usize; 3]; 3]> = vec![[[0; 3]; 3]; subjects];
    for (ci, chunk) in val.chunks(CHUNK).enumerate() {
        let refs: Vec<&TrainSample> = chunk.iter().collect();
        let idx: Vec<usize> = (0..chunk.len()).map(|i| ci * CHUNK + i).collect();
        let batch = assemble::<T>(&refs, kind, None, &idx)?;
        let probs = net.predict(&batch.input)?;
        loss_sum += ops::categorical_cross_entropy(&probs, &batch.one_hot)?.as_f64() * chunk.len() as f64;
        for (i, s) in chunk.iter().enumerate() {
            let fg: Vec<bool> = probs.plane(i, 0).iter().zip(probs.plane(i, 1)).map(|(b, f)| f > b).collect();
            let pred_labels = match kind {
                StageKind::Prostate => fg.iter().map(|&p| if p { 2 } else { 0 }).collect(),
                StageKind::CentralGland(_) => compose_labels(&s.condition.as_ref().expect("checked in assemble").data, &fg)?,
            };
            for (k, st) in Structure::ALL.iter().enumerate() {
                let pred: Vec<bool> = pred_labels.iter().map(|&l| st.contains(l)).collect();
                let gt: Vec<bool> = s.labels.data.iter().map(|&l| st.contains(l)).collect();
                let c = confusion_slices(&pred, &gt)?;
                let acc = &mut per_subject[s.subject][k];
                acc[0] += c.true_pos;
                acc[1] += c.false_pos;
                acc[2] += c.false_neg;
            }
        }
    }
    let present: Vec<&[[usize; 3]; 3]> =
        per_subject.iter().enumerate().filter(|(i, _)| val.iter().any(|s| s.subject == *i)).map(|(_, a)| a).collect();
    let dice_of = |k: usize| {
        let d: Vec<f64> = present
            .iter()
            .map(|a| {
                let [tp, fp, fng] = a[k];
                if 2 * tp + fp + fng == 0 { 1.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fng) as f64 }
            })
            .collect();
        mean_sd(&d).mean
    };
    let dice = match kind {
        StageKind::Prostate => [Some(dice_of(0)), None, None],
        StageKind::CentralGland(_) => [Some(dice_of(0)), Some(dice_of(1)), Some(dice_of(2))],
    };
    Ok((loss_sum / val.len() as f64, dice))
}

/// Runs epochs `state.epochs_done + 1 ..= min(cfg.epochs, stop_after)`,
/// saving `checkpoint` after each epoch when given.
///
/// Each epoch shuffles the training slices with `state.rng`; sample `i` of
/// epoch `e` is augmented with its own derived stream, so the trajectory
/// depends only on the seed, the data and the configuration.
pub fn run_stage<T: Scalar>(
    cfg: &TrainingConfig,
    state: &mut TrainState<T>,
    kind: StageKind,
    train: &[TrainSample],
    val: &[TrainSample],
    checkpoint: Option<&Path>,
    stop_after: Option<usize>,
) -> Result<()> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let last = stop_after.map_or(cfg.epochs, |s| s.min(cfg.epochs));
    let mut order: Vec<usize> = (0..train.len()).collect();
    while state.epochs_done < last {
        if cfg.early_stopping_patience > 0 && state.epochs_without_improvement >= cfg.early_stopping_patience {
            info!("{}: early stop after epoch {}", kind.name(), state.epochs_done);
            break;
        }
        let epoch = state.epochs_done + 1;
        let start = Instant::now();
        order.sort_unstable();
        state.rng.shuffle(&mut order);
        let adam = AdamConfig { learning_rate: cfg.learning_rate * cfg.lr_decay.powi(epoch as i32 - 1), ..Default::default() };
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&TrainSample> = idx.iter().map(|&i| &train[i]).collect();
            let batch = assemble::<T>(&refs, kind, cfg.augment.then_some((cfg, epoch)), idx)?;
            state.net.zero_grad();
            let loss = state.net.loss_and_grad(&batch.input, &batch.one_hot)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("{} loss at epoch {epoch}, batch {b}", kind.name())));
            }
            adam_step(state.net.parameters_mut(), &adam)
                .map_err(|e| Error::NonFinite(format!("{} epoch {epoch}, batch {b}: {e}", kind.name())))?;
            loss_sum += loss * idx.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        let (val_loss, dice) = if val.is_empty() { (None, [None; 3]) } else {
            let (l, d) = validate(&state.net, kind, val)?;
            (Some(l), d)
        };
        if let Some(v) = val_loss {
            if state.best_val_loss.is_none_or(|b| v < b) {
                state.best_val_loss = Some(v);
                state.epochs_without_improvement = 0;
            } else {
                state.epochs_without_improvement += 1;
            }
        }
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_dice_prostate: dice[0],
            val_dice_cg: dice[1],
            val_dice_pz: dice[2],
            seconds: start.elapsed().as_secs_f64(),
        };
        info!(
            "{} epoch {epoch}/{}: train_loss {train_loss:.5} val_loss {:.5} dice {:?} ({:.1} s)",
            kind.name(),
            cfg.epochs,
            val_loss.unwrap_or(f64::NAN),
            dice,
            rec.seconds
        );
        state.log.records.push(rec);
        state.epochs_done = epoch;
        if let Some(p) = checkpoint {
            state.save(p)?;
        }
    }
    Ok(())
}

/// Trains `net` from scratch for `cfg.epochs` epochs.
pub fn train_stage<T: Scalar>(
    cfg: &TrainingConfig,
    net: Network<T>,
    kind: StageKind,
    train: &[TrainSample],
    val: &[TrainSample],
) -> Result<(Network<T>, crate::train::TrainLog)> {
    let mut state = TrainState::new(net, crate::rng::Rng::new(cfg.seed).derive("shuffle", stage_index(kind)));
    run_stage(cfg, &mut state, kind, train, val, None, None)?;
    Ok((state.net, state.log))
}

pub(crate) fn stage_index(kind: StageKind) -> u64 {
    match kind {
        StageKind::Prostate => 1,
        StageKind::CentralGland(_) => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetworkConfig;
    use crate::rng::Rng;
    use crate::train::TrainState;

    /// Bright disk (label 2) with a brighter core (label 1) on 16x16 slices.
    fn samples(n: usize, rng: &mut Rng) -> Vec<TrainSample> {
        (0..n)
            .map(|i| {
                let (cx, cy, r) = (8.0 + rng.uniform_range(-2.0, 2.0), 8.0 + rng.uniform_range(-2.0, 2.0), rng.uniform_range(3.0, 5.0));
                let mut image = Plane::filled(16, 16, 0.0);
                let mut labels = Plane::filled(16, 16, 0u8);
                for y in 0..16 {
                    for x in 0..16 {
                        let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                        let l = if d < r / 2.0 { 1 } else if d < r { 2 } else { 0 };
                        labels.set(x, y, l);
                        image.set(x, y, [0.0, 1.0, 2.0][l as usize] - 0.8 + 0.1 * rng.normal());
                    }
                }
                TrainSample { subject: i % 3, image, labels, condition: None }
            })
            .collect()
    }

    fn net(seed: u64) -> Network<f64> {
        Network::build(&NetworkConfig::mres(1).with_size(2, 4), &mut Rng::new(seed)).unwrap()
    }

    fn cfg(epochs: usize) -> TrainingConfig {
        TrainingConfig { epochs, batch_size: 4, learning_rate: 0.01, seed: 7, ..Default::default() }
    }

    fn values(n: &Network<f64>) -> Vec<Vec<f64>> {
        n.parameters().iter().map(|p| p.value.data().to_vec()).collect()
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let data = samples(8, &mut Rng::new(1));
        let before = net(3);
        let c = TrainingConfig { learning_rate: 0.0, ..cfg(2) };
        let (after, log) = train_stage(&c, before.clone(), StageKind::Prostate, &data, &[]).unwrap();
        assert_eq!(values(&before), values(&after));
        assert_eq!(log.records.len(), 2);
    }

    #[test]
    fn overfits_a_single_batch() {
        let data = samples(4, &mut Rng::new(2));
        let c = TrainingConfig { augment: false, batch_size: 4, ..cfg(20) };
        let (_, log) = train_stage(&c, net(4), StageKind::Prostate, &data, &[]).unwrap();
        let losses: Vec<f64> = log.records.iter().map(|r| r.train_loss).collect();
        // ADAM on one fixed batch: small ripples allowed, clear overall decrease
        assert!(losses.windows(2).all(|w| w[1] <= w[0] * 1.05), "{losses:?}");
        assert!(losses[19] < 0.5 * losses[0], "{losses:?}");
    }

    #[test]
    fn same_seed_same_log_and_weights() {
        let data = samples(10, &mut Rng::new(3));
        let val = samples(3, &mut Rng::new(4));
        let (a, la) = train_stage(&cfg(2), net(5), StageKind::Prostate, &data, &val).unwrap();
        let (b, lb) = train_stage(&cfg(2), net(5), StageKind::Prostate, &data, &val).unwrap();
        assert_eq!(values(&a), values(&b));
        assert_eq!(la.without_timing(), lb.without_timing());
        assert!(la.records[0].val_dice_prostate.is_some());
        assert!(la.records[0].val_dice_cg.is_none());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = samples(10, &mut Rng::new(5));
        let val = samples(3, &mut Rng::new(6));
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("s.ckpt");
        let c = cfg(5);
        let rng = || Rng::new(c.seed).derive("shuffle", 1);

        let mut full = TrainState::new(net(6), rng());
        run_stage(&c, &mut full, StageKind::Prostate, &data, &val, None, None).unwrap();

        let mut part = TrainState::new(net(6), rng());
        run_stage(&c, &mut part, StageKind::Prostate, &data, &val, Some(&ckpt), Some(2)).unwrap();
        assert_eq!(part.epochs_done, 2);
        let mut resumed = TrainState::<f64>::load(&ckpt, part.net.config()).unwrap();
        run_stage(&c, &mut resumed, StageKind::Prostate, &data, &val, Some(&ckpt), None).unwrap();

        assert_eq!(values(&full.net), values(&resumed.net));
        assert_eq!(full.log.without_timing(), resumed.log.without_timing());

        // resuming a finished run does nothing
        let mut done = TrainState::<f64>::load(&ckpt, part.net.config()).unwrap();
        let before = values(&done.net);
        run_stage(&c, &mut done, StageKind::Prostate, &data, &val, Some(&ckpt), None).unwrap();
        assert_eq!(before, values(&done.net));
        assert_eq!(done.log.records.len(), 5);
    }

    #[test]
    fn stage_two_needs_condition_and_reports_all_structures() {
        let mut data = samples(6, &mut Rng::new(7));
        let kind = StageKind::CentralGland(CascadeVariant::MultiChannel);
        let two = Network::<f64>::build(&NetworkConfig::mres(2).with_size(2, 4), &mut Rng::new(1)).unwrap();
        assert!(train_stage(&cfg(1), two.clone(), kind, &data, &[]).is_err());
        for s in &mut data {
            s.condition = Some(Plane { nx: 16, ny: 16, data: s.labels.data.iter().map(|&l| l != 0).collect() });
        }
        let (_, log) = train_stage(&cfg(1), two, kind, &data, &data).unwrap();
        let r = &log.records[0];
        assert!(r.val_dice_prostate.is_some() && r.val_dice_cg.is_some() && r.val_dice_pz.is_some());
        // conditioning on the truth makes the composed prostate exact
        assert_eq!(r.val_dice_prostate, Some(1.0));
    }

    #[test]
    fn early_stopping_halts() {
        let data = samples(6, &mut Rng::new(8));
        let c = TrainingConfig { early_stopping_patience: 2, ..cfg(6) };
        let mut st = TrainState::new(net(1), Rng::new(0));
        st.best_val_loss = Some(0.0);
        run_stage(&c, &mut st, StageKind::Prostate, &data, &data, None, None).unwrap();
        // no loss can beat 0, so two stale epochs end the run
        assert_eq!(st.epochs_done, 2);
        assert_eq!(st.epochs_without_improvement, 2);
    }
}
