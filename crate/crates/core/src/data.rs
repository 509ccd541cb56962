use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Longest clip the pipeline accepts; longer videos are split at ingestion.
pub const MAX_FRAMES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Modality {
    Image,
    Video,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Video => "video",
        }
    }
}

/// One labelled sample. Images are stored as a single-row frame matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: u32,
    pub modality: Modality,
    /// `m x d0` descriptors, row-major; `m == 1` for images.
    pub frames: Matrix,
}

impl Sample {
    pub fn image(label: u32, descriptor: Vec<f64>) -> Result<Self> {
        let d0 = descriptor.len();
        Ok(Self {
            label,
            modality: Modality::Image,
            frames: Matrix::new(1, d0, descriptor)?,
        })
    }

    pub fn video(label: u32, frames: Matrix) -> Result<Self> {
        if frames.rows() == 0 {
            return Err(Error::EmptyVideo);
        }
        Ok(Self {
            label,
            modality: Modality::Video,
            frames,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub input_dim: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(input_dim: usize, samples: Vec<Sample>) -> Result<Self> {
        for s in &samples {
            if s.frames.cols() != input_dim {
                return Err(Error::LengthMismatch {
                    op: "dataset sample",
                    expected: input_dim,
                    found: s.frames.cols(),
                });
            }
            if s.frames.rows() == 0 {
                return Err(Error::EmptyVideo);
            }
            if s.modality == Modality::Image && s.frames.rows() != 1 {
                return Err(Error::LengthMismatch {
                    op: "image sample frames",
                    expected: 1,
                    found: s.frames.rows(),
                });
            }
        }
        Ok(Self {
            input_dim,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, modality: Modality) -> usize {
        self.samples.iter().filter(|s| s.modality == modality).count()
    }

    /// Sorted distinct labels.
    pub fn labels(&self) -> Vec<u32> {
        let mut l: Vec<u32> = self.samples.iter().map(|s| s.label).collect();
        l.sort_unstable();
        l.dedup();
        l
    }
}
