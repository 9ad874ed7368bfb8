//! Overlap metrics, volume estimates, agreement statistics and their
//! CSV / SVG output.

mod evaluate;
mod overlap;
mod report;
mod stats;

pub use evaluate::{evaluate_testset, SegmentationScores, StructureSummary};
pub use overlap::{
    confusion, confusion_slices, dice, precision, recall, score_labels, ConfusionCounts, OverlapScores, VolumeScores,
};
pub use report::{
    agreement_svg, read_ba_csv, read_scores_csv, read_tpv_csv, write_agreement_svg, write_ba_csv, write_scores_csv,
    write_tpv_csv, BA_HEADER, SCORES_HEADER, TPV_HEADER,
};
pub use stats::{
    bland_altman, mask_volume_ml, mean_sd, pearson_correlation, total_prostate_volume, BlandAltmanStats, MeanSd,
    TpvRecord,
};
