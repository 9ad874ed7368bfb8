//! The operations behind each `cascade-seg` subcommand.
//!
//! Every command reads and writes files only; reports come back as values so
//! that the binary decides what to print.

use std::path::{Path, PathBuf};

use log::{info, warn};

use crate::cascade::{segment_volume, CascadeModel, CascadeVariant, SegmentOptions, Structure};
use crate::config::RunConfig;
use crate::dataio::{
    load_split, read_volume, uncrop, write_mvol, write_phantom_set, DatasetManifest, PhantomSpec, Split, Volume,
    Volume3D,
};
use crate::error::{Error, Result};
use crate::metrics::{
    bland_altman, evaluate_testset, read_tpv_csv, write_agreement_svg, write_ba_csv, write_scores_csv, write_tpv_csv,
    BlandAltmanStats, SegmentationScores, TpvRecord,
};
use crate::tensor::{Precision, Scalar};
use crate::train::{train_cascade, CascadeTraining, TrainLog, TrainOutput};

/// Resolved configuration stored next to trained weights.
pub const RUN_CONFIG_FILE: &str = "run.cfg";
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const SCORES_FILE: &str = "scores.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TPV_FILE: &str = "tpv.csv";
pub const BA_FILE: &str = "ba.csv";
pub const SVG_FILE: &str = "agreement.svg";
pub const ABLATION_FILE: &str = "ablation.csv";

fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && std::fs::read_dir(dir)?.next().is_some() && !force {
        return Err(Error::invalid(format!("{} exists and is not empty (use --force to overwrite)", dir.display())));
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PhantomGenArgs {
    pub out: PathBuf,
    pub count: usize,
    pub seed: u64,
    pub dims: Option<[usize; 3]>,
    pub force: bool,
}

/// Writes `count` phantom volume/label pairs and `manifest.tsv`.
pub fn phantom_gen(args: &PhantomGenArgs) -> Result<DatasetManifest> {
    let mut spec = PhantomSpec::default();
    if let Some(d) = args.dims {
        spec = spec.with_dims(d);
    }
    spec.validate()?;
    prepare_out_dir(&args.out, args.force)?;
    let m = write_phantom_set(&args.out, args.count, &spec, args.seed)?;
    info!(
        "{} phantoms in {} ({} train, {} val, {} test)",
        args.count,
        args.out.display(),
        m.count(Split::Train),
        m.count(Split::Val),
        m.count(Split::Test)
    );
    Ok(m)
}

fn manifest_of(cfg: &RunConfig) -> Result<DatasetManifest> {
    let path = cfg.manifest.as_ref().ok_or_else(|| Error::Config("manifest: no manifest path configured".into()))?;
    DatasetManifest::read(path)
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub stage1_log: TrainLog,
    pub stage2_log: TrainLog,
}

fn train_as<T: Scalar>(cfg: &RunConfig, manifest: &DatasetManifest, out: &Path) -> Result<TrainReport> {
    let train = load_split(manifest, Split::Train)?;
    let val = load_split(manifest, Split::Val)?;
    if train.is_empty() {
        return Err(Error::invalid("the manifest has no training subjects"));
    }
    let CascadeTraining { stage1_log, stage2_log, .. } = train_cascade::<T>(
        &cfg.training,
        cfg.variant,
        &cfg.arch,
        &train,
        &val,
        &cfg.segment,
        TrainOutput { dir: Some(out), resume: true },
    )?;
    Ok(TrainReport { stage1_log, stage2_log })
}

/// Trains the configured cascade into `out`, resuming from checkpoints left
/// there by an interrupted run. `out` receives the weights, both logs and
/// the resolved `run.cfg`.
pub fn train(cfg: &RunConfig, out: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    let manifest = manifest_of(cfg)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(RUN_CONFIG_FILE), cfg.to_text())?;
    match cfg.precision {
        Precision::Single => train_as::<f32>(cfg, &manifest, out),
        Precision::Double => train_as::<f64>(cfg, &manifest, out),
    }
}

/// Configuration saved with the weights in `weights`, if any, with
/// `overrides` applied on top.
pub fn weights_config(weights: &Path, overrides: &[(String, String)]) -> Result<RunConfig> {
    let p = weights.join(RUN_CONFIG_FILE);
    let mut cfg = if p.exists() { RunConfig::load(Some(&p), &[])? } else { RunConfig::default() };
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub struct PredictReport {
    pub dims: [usize; 3],
    pub mean_slice_seconds: f64,
}

fn full_frame(v: &Volume3D, nx: usize, ny: usize) -> Result<Volume3D> {
    let planes: Vec<_> = (0..v.dims[2]).map(|z| uncrop(&v.slice(z), nx, ny, 0.0)).collect::<Result<_>>()?;
    Volume::from_slices(v.spacing, &planes)
}

fn predict_as<T: Scalar>(weights: &Path, input: &Path, output: &Path, dump_probs: bool, opts: &SegmentOptions) -> Result<PredictReport> {
    let model = CascadeModel::<T>::load(weights)?;
    let volume = read_volume(input)?;
    let opts = SegmentOptions { keep_debug: dump_probs, ..opts.clone() };
    let seg = segment_volume(&model, &volume, &opts)?;
    write_mvol(&seg.labels, output)?;
    if let Some(d) = &seg.debug {
        let [nx, ny, _] = volume.dims;
        for (suffix, map) in [("prostate_prob", &d.prostate_probability), ("cg_prob", &d.cg_probability)] {
            write_mvol(&full_frame(map, nx, ny)?, probability_path(output, suffix))?;
        }
    }
    Ok(PredictReport { dims: seg.labels.dims, mean_slice_seconds: seg.mean_slice_seconds() })
}

/// `labels.mvol` -> `labels_<suffix>.mvol` next to it.
pub fn probability_path(output: &Path, suffix: &str) -> PathBuf {
    let stem = output.file_stem().map_or("prediction".into(), |s| s.to_string_lossy().into_owned());
    output.with_file_name(format!("{stem}_{suffix}.mvol"))
}

/// Segments one volume. With `dump_probs`, the foreground probabilities of
/// both stages are written as double MVOL files beside `output`.
pub fn predict(cfg: &RunConfig, weights: &Path, input: &Path, output: &Path, dump_probs: bool) -> Result<PredictReport> {
    match cfg.precision {
        Precision::Single => predict_as::<f32>(weights, input, output, dump_probs, &cfg.segment),
        Precision::Double => predict_as::<f64>(weights, input, output, dump_probs, &cfg.segment),
    }
}

#[derive(Debug, Clone)]
pub struct EvaluateReport {
    pub scores: SegmentationScores,
    pub tpv: Vec<TpvRecord>,
    /// Absent with fewer than two test volumes.
    pub agreement: Option<BlandAltmanStats>,
}

fn write_summary(scores: &SegmentationScores, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["structure", "metric", "mean", "sd"])?;
    for (st, s) in Structure::ALL.iter().zip(&scores.summary) {
        for (metric, m) in [("dice", s.dice), ("precision", s.precision), ("recall", s.recall)] {
            w.write_record([st.name(), metric, &m.mean.to_string(), &m.sd.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Bland-Altman statistics of `(gt_ml, pred_ml)` plus the ba CSV and SVG.
fn write_agreement(tpv: &[TpvRecord], out: &Path) -> Result<BlandAltmanStats> {
    let pairs: Vec<(f64, f64)> = tpv.iter().map(|r| (r.gt_ml, r.pred_ml)).collect();
    let stats = bland_altman(&pairs)?;
    write_ba_csv(&stats, out.join(BA_FILE))?;
    write_agreement_svg(&pairs, &stats, out.join(SVG_FILE))?;
    for &i in &stats.outside {
        warn!("subject {} falls outside the limits of agreement", tpv[i].subject_id);
    }
    Ok(stats)
}

fn evaluate_as<T: Scalar>(cfg: &RunConfig, weights: &Path, manifest: &DatasetManifest, out: &Path) -> Result<EvaluateReport> {
    let model = CascadeModel::<T>::load(weights)?;
    let (scores, tpv) = evaluate_testset(&model, manifest, &cfg.segment)?;
    std::fs::create_dir_all(out)?;
    write_scores_csv(&scores.volumes, out.join(SCORES_FILE))?;
    write_summary(&scores, &out.join(SUMMARY_FILE))?;
    write_tpv_csv(&tpv, out.join(TPV_FILE))?;
    let agreement = if tpv.len() >= 2 {
        Some(write_agreement(&tpv, out)?)
    } else {
        warn!("agreement analysis needs at least two test volumes, skipped");
        None
    };
    Ok(EvaluateReport { scores, tpv, agreement })
}

/// Scores the test split of `manifest`: `scores.csv`, `summary.csv`,
/// `tpv.csv`, and with two or more volumes `ba.csv` and `agreement.svg`.
pub fn evaluate(cfg: &RunConfig, weights: &Path, manifest: &Path, out: &Path) -> Result<EvaluateReport> {
    let manifest = DatasetManifest::read(manifest)?;
    match cfg.precision {
        Precision::Single => evaluate_as::<f32>(cfg, weights, &manifest, out),
        Precision::Double => evaluate_as::<f64>(cfg, weights, &manifest, out),
    }
}

/// Agreement analysis of an existing tpv CSV.
pub fn agree(tpv_csv: &Path, out: &Path) -> Result<BlandAltmanStats> {
    let tpv = read_tpv_csv(tpv_csv)?;
    std::fs::create_dir_all(out)?;
    write_agreement(&tpv, out)
}

/// One row of the ablation table.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: CascadeVariant,
    pub scores: SegmentationScores,
    pub mean_tpv_percent_error: f64,
}

/// Column names of `ablation.csv`.
pub fn ablation_header() -> Vec<String> {
    let mut h = vec!["variant".to_string()];
    for st in Structure::ALL {
        for metric in ["dice", "precision", "recall"] {
            h.push(format!("{}_{metric}_mean", st.name()));
            h.push(format!("{}_{metric}_sd", st.name()));
        }
    }
    h.push("tpv_percent_error_mean".into());
    h
}

/// Trains and evaluates every variant on the same manifest and seed, each in
/// `out/<variant>/`, and writes the comparison to `out/ablation.csv`.
pub fn ablate(cfg: &RunConfig, out: &Path) -> Result<Vec<AblationRow>> {
    let manifest_path = cfg.manifest.clone().ok_or_else(|| Error::Config("manifest: no manifest path configured".into()))?;
    let mut rows = Vec::new();
    for variant in CascadeVariant::ALL {
        info!("ablation: {variant}");
        let dir = out.join(variant.name());
        let vcfg = RunConfig { variant, ..cfg.clone() };
        train(&vcfg, &dir)?;
        let report = evaluate(&vcfg, &dir, &manifest_path, &dir.join("evaluation"))?;
        let errs: Vec<f64> = report.tpv.iter().map(|r| r.percent_diff).collect();
        rows.push(AblationRow {
            variant,
            scores: report.scores,
            mean_tpv_percent_error: errs.iter().sum::<f64>() / errs.len() as f64,
        });
    }
    let mut w = csv::Writer::from_path(out.join(ABLATION_FILE))?;
    w.write_record(ablation_header())?;
    for r in &rows {
        let mut rec = vec![r.variant.name().to_string()];
        for s in &r.scores.summary {
            for m in [s.dice, s.precision, s.recall] {
                rec.push(m.mean.to_string());
                rec.push(m.sd.to_string());
            }
        }
        rec.push(r.mean_tpv_percent_error.to_string());
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_paths() {
        assert_eq!(probability_path(Path::new("/a/b/out.mvol"), "cg_prob"), Path::new("/a/b/out_cg_prob.mvol"));
    }

    #[test]
    fn ablation_header_has_nine_mean_columns() {
        let h = ablation_header();
        assert_eq!(h.iter().filter(|c| c.ends_with("_mean") && !c.starts_with("tpv")).count(), 9);
        assert_eq!(h[1], "prostate_dice_mean");
    }

    #[test]
    fn phantom_gen_refuses_non_empty_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x"), "").unwrap();
        let args = PhantomGenArgs { out: dir.path().into(), count: 1, seed: 0, dims: None, force: false };
        assert!(phantom_gen(&args).unwrap_err().to_string().contains("--force"));
    }
}
