//! Training both stages of a cascade.

use std::path::Path;

use log::info;

use crate::cascade::{argmax_mask, CascadeArch, CascadeModel, CascadeVariant, SegmentOptions};
use crate::dataio::{center_crop, znormalize_volume, Plane, Subject, Volume, CENTRAL_GLAND, PERIPHERAL_ZONE};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};
use crate::train::checkpoint::TrainState;
use crate::train::stage::{run_stage, stage_index, StageKind, TrainSample};
use crate::train::{Conditioning, TrainLog, TrainingConfig};

pub const STAGE1_CHECKPOINT: &str = "stage1.ckpt";
pub const STAGE2_CHECKPOINT: &str = "stage2.ckpt";
pub const STAGE1_LOG: &str = "stage1_log.csv";
pub const STAGE2_LOG: &str = "stage2_log.csv";

/// Crops and normalizes every slice of every subject exactly as
/// [`crate::cascade::segment_volume`] does at inference.
pub fn prepare_samples(subjects: &[Subject], prep: &SegmentOptions) -> Result<Vec<TrainSample>> {
    let mut out = Vec::new();
    for (si, s) in subjects.iter().enumerate() {
        let [nx, ny, nz] = s.volume.dims;
        let (cx, cy) = prep.crop.map_or((nx, ny), |c| (c, c));
        let planes: Vec<Plane<f64>> = (0..nz).map(|z| center_crop(&s.volume.slice(z), cx, cy)).collect::<Result<_>>()?;
        let norm = znormalize_volume(&Volume::from_slices(s.volume.spacing, &planes)?, prep.norm_scope)?;
        for z in 0..nz {
            out.push(TrainSample {
                subject: si,
                image: norm.slice(z),
                labels: center_crop(&s.labels.slice(z), cx, cy)?,
                condition: None,
            });
        }
    }
    Ok(out)
}

/// Conditions stage-2 samples on the annotated prostate.
pub fn ground_truth_conditions(samples: &mut [TrainSample]) {
    for s in samples {
        s.condition = Some(Plane { nx: s.labels.nx, ny: s.labels.ny, data: s.labels.data.iter().map(|&l| l != 0).collect() });
    }
}

/// Conditions stage-2 samples on the (frozen) stage-1 prediction.
pub fn predicted_conditions<T: Scalar>(stage1: &Network<T>, samples: &mut [TrainSample]) -> Result<()> {
    for s in samples {
        let x = Tensor::new(vec![1, 1, s.image.ny, s.image.nx], s.image.data.iter().map(|&v| T::from_f64_lossy(v)).collect())?;
        s.condition = Some(argmax_mask(&stage1.predict(&x)?)?);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CascadeTraining<T> {
    pub model: CascadeModel<T>,
    pub stage1_log: TrainLog,
    pub stage2_log: TrainLog,
}

/// Where [`train_cascade`] keeps its files, and whether it may pick up
/// existing checkpoints.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOutput<'a> {
    pub dir: Option<&'a Path>,
    pub resume: bool,
}

fn start_state<T: Scalar>(
    cfg: &TrainingConfig,
    net: Network<T>,
    kind: StageKind,
    out: TrainOutput<'_>,
    file: &str,
) -> Result<TrainState<T>> {
    if let (Some(dir), true) = (out.dir, out.resume) {
        let p = dir.join(file);
        if p.exists() {
            let st = TrainState::load(&p, net.config())?;
            info!("resuming {} after epoch {}", kind.name(), st.epochs_done);
            return Ok(st);
        }
    }
    Ok(TrainState::new(net, Rng::new(cfg.seed).derive("shuffle", stage_index(kind))))
}

/// Trains stage 1 on image -> prostate, then stage 2 on
/// `make_stage2_input(image, condition)` -> central gland.
///
/// Stage-2 training conditions on annotated or predicted prostate masks per
/// `cfg.stage2_conditioning`; validation always uses stage-1 predictions.
pub fn train_cascade<T: Scalar>(
    cfg: &TrainingConfig,
    variant: CascadeVariant,
    arch: &CascadeArch,
    train: &[Subject],
    val: &[Subject],
    prep: &SegmentOptions,
    out: TrainOutput<'_>,
) -> Result<CascadeTraining<T>> {
    cfg.validate()?;
    let has = |l: u8| train.iter().any(|s| s.labels.data.contains(&l));
    if !has(CENTRAL_GLAND) || !has(PERIPHERAL_ZONE) {
        return Err(Error::invalid("training labels must contain central gland and peripheral zone voxels"));
    }
    let init = CascadeModel::<T>::build(variant, arch, &Rng::new(cfg.seed))?;
    let div = init.stage1.config().size_divisor();
    if let Some(s) = train.iter().chain(val).find(|s| {
        let (w, h) = prep.crop.map_or((s.volume.dims[0], s.volume.dims[1]), |c| (c, c));
        w % div != 0 || h % div != 0
    }) {
        return Err(Error::Config(format!(
            "subject {} has in-plane size {}x{}, not divisible by 2^depth = {div}; regenerate phantoms with `phantom-gen --dims` multiples of {div} or set `crop`",
            s.id, s.volume.dims[0], s.volume.dims[1]
        )));
    }
    if let Some(dir) = out.dir {
        std::fs::create_dir_all(dir)?;
    }
    let ckpt = |f: &str| out.dir.map(|d| d.join(f));
    let mut train_samples = prepare_samples(train, prep)?;
    let mut val_samples = prepare_samples(val, prep)?;
    info!("{} training and {} validation slices", train_samples.len(), val_samples.len());

    let mut s1 = start_state(cfg, init.stage1, StageKind::Prostate, out, STAGE1_CHECKPOINT)?;
    run_stage(cfg, &mut s1, StageKind::Prostate, &train_samples, &val_samples, ckpt(STAGE1_CHECKPOINT).as_deref(), None)?;

    match cfg.stage2_conditioning {
        Conditioning::GroundTruth => ground_truth_conditions(&mut train_samples),
        Conditioning::Predicted => predicted_conditions(&s1.net, &mut train_samples)?,
    }
    predicted_conditions(&s1.net, &mut val_samples)?;
    let kind2 = StageKind::CentralGland(variant);
    let mut s2 = start_state(cfg, init.stage2, kind2, out, STAGE2_CHECKPOINT)?;
    run_stage(cfg, &mut s2, kind2, &train_samples, &val_samples, ckpt(STAGE2_CHECKPOINT).as_deref(), None)?;

    let model = CascadeModel::new(variant, s1.net, s2.net)?;
    if let Some(dir) = out.dir {
        model.save(dir)?;
        s1.log.write_csv(dir.join(STAGE1_LOG))?;
        s2.log.write_csv(dir.join(STAGE2_LOG))?;
    }
    Ok(CascadeTraining { model, stage1_log: s1.log, stage2_log: s2.log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_phantom, PhantomSpec};
    use crate::model::WeightFile;

    fn subjects(n: usize, dims: [usize; 3], seed: u64) -> Vec<Subject> {
        let spec = PhantomSpec { spacing: [4.0; 3], ..PhantomSpec::default().with_dims(dims) };
        (0..n)
            .map(|i| {
                let (volume, labels, _) = generate_phantom(&spec, &mut Rng::new(seed).derive("phantom", i as u64)).unwrap();
                Subject { id: format!("s{i}"), volume, labels }
            })
            .collect()
    }

    fn arch() -> CascadeArch {
        CascadeArch { depth: 2, base_channels: 4, ..CascadeArch::default() }
    }

    fn cfg(conditioning: Conditioning) -> TrainingConfig {
        TrainingConfig { epochs: 2, batch_size: 4, learning_rate: 0.005, stage2_conditioning: conditioning, ..Default::default() }
    }

    fn bytes(m: &CascadeModel<f32>) -> (Vec<u8>, Vec<u8>) {
        (WeightFile::from_network(&m.stage1).encode(), WeightFile::from_network(&m.stage2).encode())
    }

    #[test]
    fn conditioning_modes_share_stage_one() {
        let (train, val) = (subjects(3, [16, 16, 8], 1), subjects(1, [16, 16, 8], 2));
        let prep = SegmentOptions::default();
        let run = |c| train_cascade::<f32>(&cfg(c), CascadeVariant::MultiChannel, &arch(), &train, &val, &prep, TrainOutput::default()).unwrap();
        let gt = run(Conditioning::GroundTruth);
        let pred = run(Conditioning::Predicted);
        assert_eq!(gt.stage1_log.without_timing(), pred.stage1_log.without_timing());
        assert_eq!(bytes(&gt.model).0, bytes(&pred.model).0);
        assert_ne!(bytes(&gt.model).1, bytes(&pred.model).1);
        assert_eq!(gt.stage2_log.records.len(), 2);
        assert!(gt.stage2_log.records[1].val_dice_pz.is_some());
    }

    #[test]
    fn resume_from_directory_reproduces_the_run() {
        let (train, val) = (subjects(2, [16, 16, 8], 3), subjects(1, [16, 16, 8], 4));
        let prep = SegmentOptions::default();
        let c = cfg(Conditioning::GroundTruth);
        let dir = tempfile::tempdir().unwrap();
        let out = TrainOutput { dir: Some(dir.path()), resume: true };
        let first = train_cascade::<f32>(&c, CascadeVariant::SingleChannel, &arch(), &train, &val, &prep, out).unwrap();
        for f in [STAGE1_LOG, STAGE2_LOG, STAGE1_CHECKPOINT, STAGE2_CHECKPOINT, "stage1.mrwt", "stage2.mrwt"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        // both checkpoints are complete, so this only reloads them
        let again = train_cascade::<f32>(&c, CascadeVariant::SingleChannel, &arch(), &train, &val, &prep, out).unwrap();
        assert_eq!(bytes(&first.model), bytes(&again.model));
        assert_eq!(first.stage2_log.without_timing(), again.stage2_log.without_timing());
        let loaded = CascadeModel::<f32>::load(dir.path()).unwrap();
        assert_eq!(bytes(&first.model), bytes(&loaded));
    }

    #[test]
    fn indivisible_size_names_the_flag() {
        let train = subjects(1, [18, 18, 8], 5);
        let err = train_cascade::<f32>(
            &cfg(Conditioning::GroundTruth),
            CascadeVariant::MultiChannel,
            &arch(),
            &train,
            &[],
            &SegmentOptions::default(),
            TrainOutput::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("--dims"), "{err}");
    }
}
