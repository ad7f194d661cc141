//! Images, masks, manifests and the phantom generator.

mod image;
pub mod layers;
mod manifest;
pub mod phantom;
pub mod pgm;
mod roi;

pub use image::{Image, LabelMask, NUM_CLASSES};
pub use layers::{boundaries_from_mask, Boundaries, BAND_CLASS, NUM_BANDS, NUM_BOUNDARIES};
pub use manifest::{load_pair, DatasetManifest, ManifestEntry, Provenance, Split};
pub use pgm::{load_image, load_mask, save_image, save_mask};
pub use phantom::{gen_phantom, gen_phantom_at, gen_phantom_dataset, Phantom, PhantomConfig};
pub use roi::{crop_roi, crop_roi_unlabeled, downsample, downsample_mask};
