//! Voxelwise overlap scores.

use crate::cascade::{BinaryMask3D, Structure};
use crate::dataio::LabelVolume;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    /// `2tp / (2tp + fp + fn)`; 1 when both masks are empty.
    pub fn dice(&self) -> f64 {
        let den = 2 * self.true_pos + self.false_pos + self.false_neg;
        if den == 0 { 1.0 } else { 2.0 * self.true_pos as f64 / den as f64 }
    }

    /// `tp / (tp + fp)`; with an empty prediction, 1 if the truth is empty too, else 0.
    pub fn precision(&self) -> f64 {
        let den = self.true_pos + self.false_pos;
        if den == 0 {
            if self.false_neg == 0 { 1.0 } else { 0.0 }
        } else {
            self.true_pos as f64 / den as f64
        }
    }

    /// `tp / (tp + fn)`; with an empty truth, 1 if the prediction is empty too, else 0.
    pub fn recall(&self) -> f64 {
        let den = self.true_pos + self.false_neg;
        if den == 0 {
            if self.false_pos == 0 { 1.0 } else { 0.0 }
        } else {
            self.true_pos as f64 / den as f64
        }
    }
}

pub fn confusion_slices(pred: &[bool], gt: &[bool]) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(Error::shape(format!("prediction has {} voxels, truth {}", pred.len(), gt.len())));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, true) => c.false_neg += 1,
            (false, false) => c.true_neg += 1,
        }
    }
    Ok(c)
}

pub fn confusion(pred: &BinaryMask3D, gt: &BinaryMask3D) -> Result<ConfusionCounts> {
    if pred.dims != gt.dims {
        return Err(Error::shape(format!("prediction {:?} and truth {:?} differ", pred.dims, gt.dims)));
    }
    confusion_slices(&pred.data, &gt.data)
}

pub fn dice(c: &ConfusionCounts) -> f64 {
    c.dice()
}

pub fn precision(c: &ConfusionCounts) -> f64 {
    c.precision()
}

pub fn recall(c: &ConfusionCounts) -> f64 {
    c.recall()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapScores {
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
}

impl From<ConfusionCounts> for OverlapScores {
    fn from(c: ConfusionCounts) -> Self {
        OverlapScores { dice: c.dice(), precision: c.precision(), recall: c.recall() }
    }
}

/// Scores of one volume for prostate, central gland and peripheral zone.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeScores {
    pub subject_id: String,
    pub scores: [OverlapScores; 3],
}

pub fn score_labels(subject_id: &str, pred: &LabelVolume, gt: &LabelVolume) -> Result<VolumeScores> {
    let mut scores = [OverlapScores { dice: 0.0, precision: 0.0, recall: 0.0 }; 3];
    for (slot, st) in scores.iter_mut().zip(Structure::ALL) {
        *slot = confusion(&st.mask(pred), &st.mask(gt))?.into();
    }
    Ok(VolumeScores { subject_id: subject_id.to_string(), scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Volume;

    fn mask(n: usize, on: &[usize]) -> BinaryMask3D {
        let mut m = Volume::filled([n, 1, 1], [1.0; 3], false);
        for &i in on {
            m.data[i] = true;
        }
        m
    }

    #[test]
    fn identical_disjoint_and_half_overlap() {
        let a = mask(10, &[1, 2, 3]);
        let s: OverlapScores = confusion(&a, &a).unwrap().into();
        assert_eq!((s.dice, s.precision, s.recall), (1.0, 1.0, 1.0));
        let s: OverlapScores = confusion(&a, &mask(10, &[5, 6])).unwrap().into();
        assert_eq!((s.dice, s.precision, s.recall), (0.0, 0.0, 0.0));
        let s: OverlapScores = confusion(&mask(10, &[0, 1, 2, 3]), &mask(10, &[2, 3, 4, 5])).unwrap().into();
        assert_eq!((s.dice, s.precision, s.recall), (0.5, 0.5, 0.5));
    }

    #[test]
    fn all_ones_against_empty() {
        let c = confusion(&mask(6, &[0, 1, 2, 3, 4, 5]), &mask(6, &[])).unwrap();
        assert_eq!((c.false_pos, c.true_pos, c.false_neg), (6, 0, 0));
        assert_eq!(c.dice(), 0.0);
    }

    #[test]
    fn empty_conventions() {
        let e = confusion(&mask(4, &[]), &mask(4, &[])).unwrap();
        assert_eq!((e.dice(), e.precision(), e.recall()), (1.0, 1.0, 1.0));
        let miss = confusion(&mask(4, &[]), &mask(4, &[1])).unwrap();
        assert_eq!((miss.dice(), miss.precision(), miss.recall()), (0.0, 0.0, 0.0));
    }

    #[test]
    fn mismatched_dims_rejected() {
        assert!(confusion(&mask(4, &[]), &mask(5, &[])).is_err());
    }
}
