//! Frames, fixations, clips, splits and the synthetic scene generator.

pub mod clips;
pub mod fixations;
pub mod image;
pub mod preprocess;
pub mod synth;
pub mod video;

pub use clips::{segment_clips, split_dataset, Split, SplitRatios};
pub use fixations::{fixations_to_map, Fixation, FixationSet};
pub use image::Image;
pub use preprocess::{dataset_mean, preprocess_frame, ChannelMean};
pub use synth::{generate_synthetic, SyntheticSceneSpec, SyntheticVideo};
pub use video::{BoxRecord, Manifest, Video};
