//! Volume files, preprocessing, triplet assembly, fold construction and the
//! synthetic phantom generator.

mod folds;
mod phantom;
mod preprocess;
mod triplets;
mod volume;

// Medical formats (NIfTI, DICOM) are not read here. A converter would load the
// scan with an external reader, build a [`Volume`] from its voxel array in
// (slice, row, column) order, and write it with [`save_volume`].

pub use folds::{make_folds, read_manifest, write_manifest, FoldSpec, FoldVolume, ManifestEntry, VALIDATION_SCANS};
pub use phantom::{generate_phantom, PhantomSpec, BRAIN_BAND, LESION_BAND};
pub use preprocess::{content_box, crop_to_roi, normalize_intensity, preprocess, remove_black_slices, ContentBox, PreprocessSummary};
pub use triplets::{batch_tensor, make_triplets, mask_tensor, Triplet};
pub use volume::{
    decode_mask, decode_volume, encode_mask, encode_volume, load_mask, load_volume, save_mask, save_volume, write_atomic,
    Dims, MaskVolume, Volume, HEADER_LEN, MASK_MAGIC, VOLUME_MAGIC,
};
