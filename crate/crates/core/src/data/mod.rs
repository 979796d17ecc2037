//! Track ingestion, sample extraction, normalization and synthetic scenes.

pub mod frames;
pub mod image;
pub mod norm;
pub mod samples;
pub mod speed;
pub mod synth;
pub mod track;

pub use frames::{DirFrames, FrameSource, SynthFrames};
pub use image::Image;
pub use norm::{denormalize, offset_and_zscore, NormStats};
pub use samples::{
    compute_class_weight, extract_classification_samples, extract_trajectory_samples, sample_at_row, ClassificationProtocol,
    Extraction, Sample, TrajWindow, OBS_LEN, OBS_ROWS, PRED_LEN, SEQ_LEN,
};
pub use speed::encode_speed_ordinal;
pub use synth::{generate_synthetic_dataset, SynthConfig, SynthScene};
pub use track::{load_tracks, parse_tracks, save_tracks, BBox, Split, Track, TrackSet};
