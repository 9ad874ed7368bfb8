//! Interrupt a training stage, resume it from its checkpoint, and confirm
//! the result is bitwise identical to an uninterrupted run.

use cascade_seg::dataio::Plane;
use cascade_seg::model::{Network, NetworkConfig, WeightFile};
use cascade_seg::rng::Rng;
use cascade_seg::train::{run_stage, StageKind, TrainSample, TrainState, TrainingConfig};

fn samples(n: usize, rng: &mut Rng) -> Vec<TrainSample> {
    (0..n)
        .map(|i| {
            // a bright disc on noise, labeled as prostate
            let (cx, cy, r) = (8.0 + rng.uniform_range(-2.0, 2.0), 8.0 + rng.uniform_range(-2.0, 2.0), 4.0);
            let mut labels = Plane::filled(16, 16, 0u8);
            let mut image = Plane::filled(16, 16, 0.0);
            for y in 0..16 {
                for x in 0..16 {
                    let inside = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r;
                    labels.set(x, y, if inside { 2 } else { 0 });
                    image.set(x, y, if inside { 1.0 } else { 0.0 } + 0.1 * rng.normal());
                }
            }
            TrainSample { subject: i, image, labels, condition: None }
        })
        .collect()
}

fn main() -> cascade_seg::Result<()> {
    let mut rng = Rng::new(9);
    let (train, val) = (samples(12, &mut rng), samples(4, &mut rng));
    let config = NetworkConfig::mres(1).with_size(2, 4);
    let cfg = TrainingConfig { epochs: 4, batch_size: 4, learning_rate: 0.005, seed: 2, ..Default::default() };
    let fresh = || -> cascade_seg::Result<TrainState<f32>> {
        Ok(TrainState::new(Network::build(&config, &mut Rng::new(cfg.seed))?, Rng::new(cfg.seed).derive("shuffle", 0)))
    };

    let mut straight = fresh()?;
    run_stage(&cfg, &mut straight, StageKind::Prostate, &train, &val, None, None)?;

    let dir = tempfile_dir();
    let ckpt = dir.join("stage.ckpt");
    let mut first = fresh()?;
    run_stage(&cfg, &mut first, StageKind::Prostate, &train, &val, Some(&ckpt), Some(2))?;
    println!("stopped after epoch {}; checkpoint is {} bytes", first.epochs_done, std::fs::metadata(&ckpt)?.len());
    let mut resumed = TrainState::<f32>::load(&ckpt, &config)?;
    run_stage(&cfg, &mut resumed, StageKind::Prostate, &train, &val, Some(&ckpt), None)?;

    for r in &resumed.log.records {
        println!("epoch {}: train loss {:.5}, val loss {:.5}", r.epoch, r.train_loss, r.val_loss.unwrap_or(f64::NAN));
    }
    let same_weights = WeightFile::from_network(&straight.net).encode() == WeightFile::from_network(&resumed.net).encode();
    let same_log = straight.log.without_timing() == resumed.log.without_timing();
    println!("weights identical: {same_weights}, log identical: {same_log}");
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("checkpoint_resume_{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
