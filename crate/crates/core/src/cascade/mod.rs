//! The two-stage cascade and its mask algebra.

mod mask;
mod pipeline;

pub use mask::{
    compose_label, compose_labels, count, derive_peripheral_zone, derive_peripheral_zone_3d, exclusion,
    largest_component, BinaryMask2D, BinaryMask3D, Structure,
};
pub use pipeline::{
    argmax_mask, make_stage2_batch, make_stage2_input, predict_central_gland, predict_prostate, segment_volume,
    slice_tensor, CascadeArch, CascadeModel, CascadeVariant, DebugMaps, SegmentOptions, Segmentation, CASCADE_FILE,
    STAGE1_FILE, STAGE2_FILE,
};
