//! Train a small cascade on coarse phantoms, then segment and score an
//! unseen one. Takes well under a minute.

use cascade_seg::cascade::{CascadeArch, CascadeVariant, SegmentOptions, segment_volume};
use cascade_seg::dataio::{generate_phantom, PhantomSpec, Subject};
use cascade_seg::metrics::{score_labels, TpvRecord};
use cascade_seg::rng::Rng;
use cascade_seg::train::{train_cascade, TrainOutput, TrainingConfig};

fn main() -> cascade_seg::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let spec = PhantomSpec { spacing: [2.0; 3], ..PhantomSpec::default().with_dims([32, 32, 16]) };
    let master = Rng::new(5);
    let subject = |i: u64| -> cascade_seg::Result<Subject> {
        let (volume, labels, _) = generate_phantom(&spec, &mut master.derive("phantom", i))?;
        Ok(Subject { id: format!("p{i}"), volume, labels })
    };
    let train: Vec<Subject> = (0..8).map(subject).collect::<Result<_, _>>()?;
    let val = vec![subject(8)?];
    let test = subject(9)?;

    let cfg = TrainingConfig { epochs: 6, batch_size: 4, learning_rate: 0.003, seed: 1, ..Default::default() };
    let arch = CascadeArch { depth: 2, base_channels: 6, ..CascadeArch::default() };
    let opts = SegmentOptions::default();
    let trained =
        train_cascade::<f32>(&cfg, CascadeVariant::MultiChannel, &arch, &train, &val, &opts, TrainOutput::default())?;

    let seg = segment_volume(&trained.model, &test.volume, &opts)?;
    let scores = score_labels(&test.id, &seg.labels, &test.labels)?;
    for (name, s) in ["prostate", "central gland", "peripheral zone"].iter().zip(&scores.scores) {
        println!("{name:>16}: dice {:.3}  precision {:.3}  recall {:.3}", s.dice, s.precision, s.recall);
    }
    let tpv = TpvRecord::from_labels(&test.id, &test.labels, &seg.labels);
    println!("TPV {:.2} mL predicted vs {:.2} mL true ({:.1}% off)", tpv.pred_ml, tpv.gt_ml, tpv.percent_diff);
    println!("{:.4} s per slice", seg.mean_slice_seconds());
    Ok(())
}
