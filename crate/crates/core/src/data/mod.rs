//! Corpus construction, augmentation and batch sampling.

pub mod augment;
pub mod curate;
pub mod image;
pub mod manifest;
pub mod sampler;
pub mod synthetic;

pub use augment::{augment, hflip, AugmentConfig};
pub use curate::{curate, extract_gap_frames, filter_static, gap_frame_indices, CurationConfig, CurationReport};
pub use image::{images_to_tensor, Image, RgbImage};
pub use manifest::{VideoManifest, VideoRecord, MANIFEST_FILE};
pub use sampler::{plan_batch, sample_batch, Batch, BatchPlan, FrameStore, SamplingRegime};
pub use synthetic::{generate_synthetic, SyntheticWorldConfig};
