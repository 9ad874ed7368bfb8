//! Volume I/O, preprocessing, augmentation, datasets and phantoms.

mod augment;
mod dataset;
mod phantom;
mod preprocess;
mod volume;

pub use augment::{apply as apply_augmentation, augment, AugmentConfig, AugmentParams};
pub use dataset::{
    default_split_counts, load_split, load_subject, slice_volume, split_dataset, write_phantom_set, DatasetManifest,
    ManifestRecord, Sample, Split, Subject,
};
pub use phantom::{generate_phantom, PhantomGeometry, PhantomSpec};
pub use preprocess::{
    center_crop, center_crop_volume, crop_offset, mean_std, uncrop, znormalize, znormalize_volume, NormScope, MIN_STD,
};
pub use volume::{
    decode_mvol, read_labels, read_mvol, read_volume, write_mvol, ImageSlice, LabelSlice, LabelVolume, MvolData,
    MvolElement, Plane, Volume, Volume3D, BACKGROUND, CENTRAL_GLAND, MVOL_MAGIC, MVOL_VERSION, PERIPHERAL_ZONE,
};
