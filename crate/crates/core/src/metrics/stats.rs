//! Summary statistics, volumes and agreement analysis.

use crate::cascade::BinaryMask3D;
use crate::dataio::LabelVolume;
use crate::error::{Error, Result};

/// Mean and sample standard deviation (`n - 1`); the sd of a single value is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

pub fn mean_sd(values: &[f64]) -> MeanSd {
    let n = values.len();
    if n == 0 {
        return MeanSd { mean: f64::NAN, sd: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n < 2 { 0.0 } else { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
    MeanSd { mean, sd }
}

/// Prostate (labels 1 and 2) volume in mL.
pub fn total_prostate_volume(labels: &LabelVolume) -> f64 {
    labels.prostate_voxels() as f64 * labels.voxel_volume() / 1000.0
}

pub fn mask_volume_ml(mask: &BinaryMask3D) -> f64 {
    crate::cascade::count(&mask.data) as f64 * mask.voxel_volume() / 1000.0
}

/// Ground-truth and predicted total prostate volume of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct TpvRecord {
    pub subject_id: String,
    pub gt_ml: f64,
    pub pred_ml: f64,
    /// `|pred - gt| / gt * 100`; NaN when the truth is empty.
    pub percent_diff: f64,
}

impl TpvRecord {
    pub fn new(subject_id: impl Into<String>, gt_ml: f64, pred_ml: f64) -> Self {
        let percent_diff = if gt_ml > 0.0 { (pred_ml - gt_ml).abs() / gt_ml * 100.0 } else { f64::NAN };
        TpvRecord { subject_id: subject_id.into(), gt_ml, pred_ml, percent_diff }
    }

    pub fn from_labels(subject_id: &str, gt: &LabelVolume, pred: &LabelVolume) -> Self {
        Self::new(subject_id, total_prostate_volume(gt), total_prostate_volume(pred))
    }
}

/// Agreement between paired measurements `(reference, test)`; differences
/// are `test - reference`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlandAltmanStats {
    pub n: usize,
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    /// `1.96 * sd_diff`, in measurement units.
    pub rpc: f64,
    /// `rpc` as a percentage of the grand mean of all `2n` measurements.
    pub rpc_pct: f64,
    /// `sd_diff` as a percentage of the grand mean of all `2n` measurements.
    pub cv_pct: f64,
    /// Pearson correlation; 1 for identical sequences, NaN when otherwise undefined.
    pub pearson_r: f64,
    /// Indices of pairs whose difference falls outside the limits of agreement.
    pub outside: Vec<usize>,
}

pub fn bland_altman(pairs: &[(f64, f64)]) -> Result<BlandAltmanStats> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::invalid(format!("Bland-Altman analysis needs at least 2 pairs, got {n}")));
    }
    let diffs: Vec<f64> = pairs.iter().map(|(r, t)| t - r).collect();
    let MeanSd { mean, sd } = mean_sd(&diffs);
    let rpc = 1.96 * sd;
    let (loa_low, loa_high) = (mean - rpc, mean + rpc);
    let grand = pairs.iter().map(|(r, t)| r + t).sum::<f64>() / (2 * n) as f64;
    let pearson_r = match pearson_correlation(pairs) {
        Ok(r) => r,
        Err(_) if pairs.iter().all(|(r, t)| r == t) => 1.0,
        Err(_) => f64::NAN,
    };
    Ok(BlandAltmanStats {
        n,
        mean_diff: mean,
        sd_diff: sd,
        loa_low,
        loa_high,
        rpc,
        rpc_pct: rpc / grand * 100.0,
        cv_pct: sd / grand * 100.0,
        pearson_r,
        outside: diffs.iter().enumerate().filter(|(_, &d)| d < loa_low || d > loa_high).map(|(i, _)| i).collect(),
    })
}

/// Sample Pearson correlation of the two coordinates.
pub fn pearson_correlation(pairs: &[(f64, f64)]) -> Result<f64> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::invalid(format!("correlation needs at least 2 pairs, got {n}")));
    }
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("correlation is undefined when a sequence has zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Volume;

    #[test]
    fn differences_one_two_three() {
        let s = bland_altman(&[(0.0, 1.0), (0.0, 2.0), (0.0, 3.0)]).unwrap();
        assert!((s.mean_diff - 2.0).abs() < 1e-12);
        assert!((s.sd_diff - 1.0).abs() < 1e-12);
        assert!((s.loa_low - 0.04).abs() < 1e-12 && (s.loa_high - 3.96).abs() < 1e-12);
        assert!((s.rpc - 1.96).abs() < 1e-12);
        assert!(s.outside.is_empty());
    }

    #[test]
    fn identical_pairs() {
        let s = bland_altman(&[(3.0, 3.0), (5.0, 5.0), (5.0, 5.0)]).unwrap();
        assert_eq!((s.mean_diff, s.sd_diff, s.rpc, s.pearson_r), (0.0, 0.0, 0.0, 1.0));
        let c = bland_altman(&[(4.0, 4.0), (4.0, 4.0)]).unwrap();
        assert_eq!(c.pearson_r, 1.0);
    }

    #[test]
    fn too_few_pairs() {
        assert!(matches!(bland_altman(&[(1.0, 2.0)]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn pearson_cases() {
        let p = [(1.0, 2.0), (2.0, 2.0), (3.0, 4.0)];
        // means 2 and 8/3; sxy = 2, sxx = 2, syy = 8/3
        let expected = 2.0 / (2.0f64 * 8.0 / 3.0).sqrt();
        assert!((pearson_correlation(&p).unwrap() - expected).abs() < 1e-12);
        let same: Vec<_> = (0..5).map(|i| (i as f64, i as f64)).collect();
        assert_eq!(pearson_correlation(&same).unwrap(), 1.0);
        let neg: Vec<_> = (0..5).map(|i| (i as f64, 7.0 - i as f64)).collect();
        assert_eq!(pearson_correlation(&neg).unwrap(), -1.0);
        assert!(matches!(pearson_correlation(&[(1.0, 1.0)]), Err(Error::InvalidArgument(_))));
        assert!(matches!(pearson_correlation(&[(1.0, 1.0), (1.0, 2.0)]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn tpv_units() {
        let mut l = Volume::filled([10, 10, 10], [1.0; 3], 0u8);
        l.data.iter_mut().for_each(|v| *v = 2);
        assert_eq!(total_prostate_volume(&l), 1.0);
        assert_eq!(total_prostate_volume(&Volume::filled([10, 10, 10], [1.0; 3], 0u8)), 0.0);
        let mut a = Volume::filled([10, 10, 10], [1.0, 1.0, 2.0], 0u8);
        a.data[..500].iter_mut().for_each(|v| *v = 1);
        assert_eq!(total_prostate_volume(&a), 1.0);
        assert_eq!(TpvRecord::new("s", 10.0, 11.0).percent_diff, 10.0);
    }

    #[test]
    fn mean_sd_sample() {
        let m = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_sd(&[7.0]).sd, 0.0);
    }
}
