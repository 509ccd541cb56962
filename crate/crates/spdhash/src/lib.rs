//! On-disk formats, synthetic data and reporting for `spdhash-core`.
//!
//! Two little-endian binary formats are defined here: the feature archive
//! (`SPDH`) holding labelled image and video descriptors, and the model
//! checkpoint (`SPDM`). Archives store `f32`; everything is widened to `f64`
//! when converted into a [`spdhash_core::Dataset`].

pub mod archive;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod report;
pub mod synth;

mod bytes;

pub use archive::{FeatureArchive, Record};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use error::{Error, Result};
pub use synth::{synth_generate, synth_generate_split, SynthConfig};
