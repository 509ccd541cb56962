//! Feature archive (`SPDH`).
//!
//! ```text
//! header   magic "SPDH" | version u32 | d0 u32 | record count u32
//! record   label u32 | modality u8 (0 image, 1 video) | m u32 | m*d0 f32
//! ```
//!
//! All integers and floats are little-endian; frames are row-major.

use std::fs;
use std::path::Path;

use spdhash_core::data::MAX_FRAMES;
use spdhash_core::{Dataset, Matrix, Modality, Sample};

use crate::bytes::Reader;
use crate::error::{Error, Result};

pub const ARCHIVE_MAGIC: [u8; 4] = *b"SPDH";
pub const ARCHIVE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
const RECORD_HEADER_LEN: u64 = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub label: u32,
    pub modality: Modality,
    /// Frame count `m`; 1 for images.
    pub frames: usize,
    /// `frames x d0` values, row-major.
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureArchive {
    input_dim: usize,
    records: Vec<Record>,
}

/// Splits `m` frames into the fewest clips of at most [`MAX_FRAMES`],
/// with lengths differing by at most one.
pub fn clip_lengths(m: usize) -> Vec<usize> {
    let n = m.div_ceil(MAX_FRAMES).max(1);
    (0..n).map(|i| m / n + usize::from(i < m % n)).collect()
}

fn modality_flag(m: Modality) -> u8 {
    match m {
        Modality::Image => 0,
        Modality::Video => 1,
    }
}

impl FeatureArchive {
    pub fn new(input_dim: usize) -> Result<Self> {
        if input_dim == 0 || u32::try_from(input_dim).is_err() {
            return Err(Error::CorruptHeader(format!(
                "descriptor length {input_dim} out of range"
            )));
        }
        Ok(Self {
            input_dim,
            records: Vec::new(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, modality: Modality) -> usize {
        self.records.iter().filter(|r| r.modality == modality).count()
    }

    fn check_values(&self, index: usize, data: &[f32]) -> Result<()> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptRecord {
                index,
                reason: "non-finite descriptor value".into(),
            });
        }
        Ok(())
    }

    pub fn push_image(&mut self, label: u32, descriptor: &[f32]) -> Result<()> {
        let index = self.records.len();
        if descriptor.len() != self.input_dim {
            return Err(Error::CorruptRecord {
                index,
                reason: format!(
                    "image has {} values, expected {}",
                    descriptor.len(),
                    self.input_dim
                ),
            });
        }
        self.check_values(index, descriptor)?;
        self.records.push(Record {
            label,
            modality: Modality::Image,
            frames: 1,
            data: descriptor.to_vec(),
        });
        Ok(())
    }

    /// Appends a video of `data.len() / d0` frames. Videos longer than
    /// [`MAX_FRAMES`] are split into consecutive clips (see [`clip_lengths`]),
    /// each stored as its own record with the same label. Returns the number
    /// of records written.
    pub fn push_video(&mut self, label: u32, data: &[f32]) -> Result<usize> {
        let index = self.records.len();
        if data.is_empty() || !data.len().is_multiple_of(self.input_dim) {
            return Err(Error::CorruptRecord {
                index,
                reason: format!(
                    "video has {} values, not a positive multiple of {}",
                    data.len(),
                    self.input_dim
                ),
            });
        }
        self.check_values(index, data)?;
        let m = data.len() / self.input_dim;
        let lens = clip_lengths(m);
        let mut start = 0;
        for &len in &lens {
            let end = start + len * self.input_dim;
            self.records.push(Record {
                label,
                modality: Modality::Video,
                frames: len,
                data: data[start..end].to_vec(),
            });
            start = end;
        }
        Ok(lens.len())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self
            .records
            .iter()
            .map(|r| RECORD_HEADER_LEN as usize + 4 * r.data.len())
            .sum();
        let mut out = Vec::with_capacity(HEADER_LEN + payload);
        out.extend_from_slice(&ARCHIVE_MAGIC);
        out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&r.label.to_le_bytes());
            out.push(modality_flag(r.modality));
            out.extend_from_slice(&(r.frames as u32).to_le_bytes());
            for v in &r.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        let magic = r.take(4)?;
        if magic != ARCHIVE_MAGIC {
            return Err(Error::CorruptHeader(format!(
                "bad magic {magic:02x?}, expected \"SPDH\""
            )));
        }
        let version = r.u32()?;
        if version != ARCHIVE_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: ARCHIVE_VERSION,
            });
        }
        let d0 = r.u32()? as usize;
        let count = r.u32()? as usize;
        if d0 == 0 {
            return Err(Error::CorruptHeader("descriptor length is zero".into()));
        }
        // Reject absurd counts before reading any record.
        r.require(count as u64 * RECORD_HEADER_LEN)?;

        let mut archive = Self::new(d0)?;
        for index in 0..count {
            let label = r.u32()?;
            let modality = match r.u8()? {
                0 => Modality::Image,
                1 => Modality::Video,
                f => {
                    return Err(Error::CorruptRecord {
                        index,
                        reason: format!("unknown modality flag {f}"),
                    })
                }
            };
            let m = r.u32()? as usize;
            let bad = |reason: String| Error::CorruptRecord { index, reason };
            match modality {
                _ if m == 0 => return Err(bad("zero frames".into())),
                Modality::Image if m != 1 => {
                    return Err(bad(format!("image record with {m} frames")))
                }
                Modality::Video if m > MAX_FRAMES => {
                    return Err(bad(format!("video clip of {m} frames exceeds {MAX_FRAMES}")))
                }
                _ => {}
            }
            let n = m * d0;
            r.require(4 * n as u64)?;
            let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<f32>>>()?;
            archive.check_values(index, &data)?;
            archive.records.push(Record {
                label,
                modality,
                frames: m,
                data,
            });
        }
        r.finish()?;
        Ok(archive)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Widens every record to `f64`.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let samples = self
            .records
            .iter()
            .map(|r| {
                let data: Vec<f64> = r.data.iter().map(|&v| f64::from(v)).collect();
                match r.modality {
                    Modality::Image => Sample::image(r.label, data),
                    Modality::Video => {
                        Sample::video(r.label, Matrix::new(r.frames, self.input_dim, data)?)
                    }
                }
            })
            .collect::<spdhash_core::Result<Vec<_>>>()?;
        Ok(Dataset::new(self.input_dim, samples)?)
    }
}

pub fn write_archive(archive: &FeatureArchive, path: &Path) -> Result<()> {
    archive.write(path)
}

pub fn read_archive(path: &Path) -> Result<FeatureArchive> {
    FeatureArchive::read(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FeatureArchive {
        let mut a = FeatureArchive::new(2).unwrap();
        a.push_image(3, &[1.0, -2.0]).unwrap();
        a.push_video(4, &[0.5, 0.25, -1.0, 8.0]).unwrap();
        a
    }

    #[test]
    fn clip_lengths_cover_input() {
        assert_eq!(clip_lengths(1), vec![1]);
        assert_eq!(clip_lengths(30), vec![30]);
        assert_eq!(clip_lengths(31), vec![16, 15]);
        assert_eq!(clip_lengths(65), vec![22, 22, 21]);
        for m in 1..200 {
            let l = clip_lengths(m);
            assert_eq!(l.iter().sum::<usize>(), m);
            assert!(l.iter().all(|&x| (1..=MAX_FRAMES).contains(&x)));
        }
    }

    #[test]
    fn long_video_is_split() {
        let mut a = FeatureArchive::new(1).unwrap();
        let data: Vec<f32> = (0..70).map(|i| i as f32).collect();
        assert_eq!(a.push_video(9, &data).unwrap(), 3);
        let frames: Vec<usize> = a.records().iter().map(|r| r.frames).collect();
        assert_eq!(frames, vec![24, 23, 23]);
        let joined: Vec<f32> = a.records().iter().flat_map(|r| r.data.clone()).collect();
        assert_eq!(joined, data);
        assert!(a.records().iter().all(|r| r.label == 9));
    }

    #[test]
    fn byte_layout() {
        let b = small().to_bytes();
        assert_eq!(&b[0..4], b"SPDH");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &2u32.to_le_bytes());
        assert_eq!(b.len(), 16 + (9 + 8) + (9 + 16));
        assert_eq!(b[20], 0);
        assert_eq!(b[16 + 17 + 4], 1);
    }

    #[test]
    fn round_trip() {
        let a = small();
        let b = FeatureArchive::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.to_bytes(), a.to_bytes());
        let ds = b.to_dataset().unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.samples[1].frames.shape(), (2, 2));
    }

    #[test]
    fn rejects_bad_records() {
        let mut a = FeatureArchive::new(2).unwrap();
        assert!(a.push_image(0, &[1.0]).is_err());
        assert!(a.push_video(0, &[1.0, 2.0, 3.0]).is_err());
        assert!(a.push_video(0, &[]).is_err());
        assert!(a.push_image(0, &[f32::NAN, 0.0]).is_err());
        assert!(a.is_empty());
    }
}
