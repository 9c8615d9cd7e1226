//! Adaptive multi-scale acoustic event detection.

pub mod audio;
mod binio;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod features;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod trainer;

pub use audio::{read_wav, write_wav, Waveform};
pub use error::{Error, Result};
pub use features::{fbank, normalize, segment, FeatureMatrix, FeatureParams, LabelSpan, SegmentMode};
