//! Test-set evaluation.

use log::warn;

use crate::cascade::{segment_volume, CascadeModel, SegmentOptions, Structure};
use crate::dataio::{load_subject, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::metrics::overlap::{score_labels, VolumeScores};
use crate::metrics::stats::{mean_sd, MeanSd, TpvRecord};
use crate::tensor::Scalar;

/// Mean and sample sd of one structure's scores across volumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureSummary {
    pub dice: MeanSd,
    pub precision: MeanSd,
    pub recall: MeanSd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationScores {
    /// Per-volume scores in manifest order.
    pub volumes: Vec<VolumeScores>,
    /// Indexed like [`Structure::ALL`].
    pub summary: [StructureSummary; 3],
}

impl SegmentationScores {
    pub fn from_volumes(volumes: Vec<VolumeScores>) -> Self {
        let summary = std::array::from_fn(|s| {
            let collect = |f: fn(&crate::metrics::OverlapScores) -> f64| {
                mean_sd(&volumes.iter().map(|v| f(&v.scores[s])).collect::<Vec<_>>())
            };
            StructureSummary { dice: collect(|o| o.dice), precision: collect(|o| o.precision), recall: collect(|o| o.recall) }
        });
        SegmentationScores { volumes, summary }
    }

    pub fn structure(&self, st: Structure) -> &StructureSummary {
        &self.summary[Structure::ALL.iter().position(|&s| s == st).unwrap()]
    }
}

/// Segments every test subject of `manifest` and scores it against its labels.
///
/// Subjects whose label file is missing are skipped with a warning; an empty
/// test split (or one where every subject was skipped) is an error.
pub fn evaluate_testset<T: Scalar>(
    model: &CascadeModel<T>,
    manifest: &DatasetManifest,
    opts: &SegmentOptions,
) -> Result<(SegmentationScores, Vec<TpvRecord>)> {
    if manifest.count(Split::Test) == 0 {
        return Err(Error::invalid("the manifest has no test subjects"));
    }
    let mut volumes = Vec::new();
    let mut tpv = Vec::new();
    for record in manifest.subjects(Split::Test) {
        if !record.label_path.exists() {
            warn!("subject {}: label file {} missing, skipped", record.subject_id, record.label_path.display());
            continue;
        }
        let subject = load_subject(record)?;
        let seg = segment_volume(model, &subject.volume, opts)?;
        volumes.push(score_labels(&subject.id, &seg.labels, &subject.labels)?);
        tpv.push(TpvRecord::from_labels(&subject.id, &subject.labels, &seg.labels));
    }
    if volumes.is_empty() {
        return Err(Error::invalid("no test subject has labels"));
    }
    Ok((SegmentationScores::from_volumes(volumes), tpv))
}
