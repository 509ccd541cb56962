//! Seeded synthetic face-set stand-in.
//!
//! Each class `k` has a center `c_k ~ N(0, spread^2 I)`. A video of class
//! `k` draws one offset `o ~ N(0, noise^2 I)` and its frames are
//! `c_k + o + e_t` with per-frame drift `e_t ~ N(0, drift^2 I)`. Image
//! records are frames sampled without replacement from a video and stored
//! with the image modality flag.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use spdhash_core::rng::seeded;

use crate::archive::FeatureArchive;
use crate::error::{Error, Result};

/// Images sampled per training video by [`synth_generate_split`].
pub const TRAIN_IMAGES_PER_VIDEO: usize = 3;
/// Images sampled per held-out video by [`synth_generate_split`].
pub const TEST_IMAGES_PER_VIDEO: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub videos_per_class: usize,
    pub frames_per_video: usize,
    pub input_dim: usize,
    pub center_spread: f64,
    pub noise_scale: f64,
    pub drift_scale: f64,
    /// Images sampled per video by [`synth_generate`].
    pub images_per_video: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            videos_per_class: 20,
            frames_per_video: 15,
            input_dim: 32,
            center_spread: 1.0,
            noise_scale: 0.3,
            drift_scale: 0.3,
            images_per_video: 1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m| Err(Error::InvalidSynthConfig(m));
        if self.classes < 2 {
            return bad("classes must be at least 2");
        }
        if self.videos_per_class == 0 || self.frames_per_video == 0 || self.input_dim == 0 {
            return bad("videos_per_class, frames_per_video and input_dim must be positive");
        }
        for s in [self.center_spread, self.noise_scale, self.drift_scale] {
            if !(s > 0.0 && s.is_finite()) {
                return bad("scales must be positive and finite");
            }
        }
        if self.images_per_video > self.frames_per_video {
            return bad("images_per_video exceeds frames_per_video");
        }
        Ok(())
    }
}

fn gaussian<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Draws every video in class order and hands it to `sink` together with
/// its class and within-class index.
fn generate<F>(cfg: &SynthConfig, mut sink: F) -> Result<()>
where
    F: FnMut(u32, usize, &[f32], &mut dyn FnMut(usize) -> Vec<usize>) -> Result<()>,
{
    cfg.validate()?;
    let d0 = cfg.input_dim;
    let mut rng = seeded(cfg.seed);
    let centers: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| gaussian(&mut rng, d0, cfg.center_spread))
        .collect();
    for (k, center) in centers.iter().enumerate() {
        for v in 0..cfg.videos_per_class {
            let offset = gaussian(&mut rng, d0, cfg.noise_scale);
            let mut frames = Vec::with_capacity(cfg.frames_per_video * d0);
            for _ in 0..cfg.frames_per_video {
                for j in 0..d0 {
                    let drift: f64 = cfg.drift_scale * rng.sample::<f64, _>(StandardNormal);
                    frames.push((center[j] + offset[j] + drift) as f32);
                }
            }
            let mut pick = |n: usize| index::sample(&mut rng, cfg.frames_per_video, n).into_vec();
            sink(k as u32, v, &frames, &mut pick)?;
        }
    }
    Ok(())
}

fn push_with_images(
    archive: &mut FeatureArchive,
    label: u32,
    frames: &[f32],
    picked: &[usize],
) -> Result<()> {
    let d0 = archive.input_dim();
    archive.push_video(label, frames)?;
    for &f in picked {
        archive.push_image(label, &frames[f * d0..(f + 1) * d0])?;
    }
    Ok(())
}

/// One archive; every video is followed by `images_per_video` of its frames.
pub fn synth_generate(cfg: &SynthConfig) -> Result<FeatureArchive> {
    let mut archive = FeatureArchive::new(cfg.input_dim)?;
    generate(cfg, |label, _, frames, pick| {
        let picked = pick(cfg.images_per_video);
        push_with_images(&mut archive, label, frames, &picked)
    })?;
    Ok(archive)
}

/// Train/test archives sharing class centers. The last
/// `test_videos_per_class` videos of each class go to the test archive with
/// [`TEST_IMAGES_PER_VIDEO`] images each; the rest go to the training
/// archive with [`TRAIN_IMAGES_PER_VIDEO`] images each. `images_per_video`
/// is not used here.
pub fn synth_generate_split(
    cfg: &SynthConfig,
    test_videos_per_class: usize,
) -> Result<(FeatureArchive, FeatureArchive)> {
    if test_videos_per_class == 0 || test_videos_per_class >= cfg.videos_per_class {
        return Err(Error::InvalidSynthConfig(
            "test videos per class must lie in 1..videos_per_class",
        ));
    }
    if cfg.frames_per_video < TRAIN_IMAGES_PER_VIDEO {
        return Err(Error::InvalidSynthConfig(
            "frames_per_video too small for the training image count",
        ));
    }
    let n_train = cfg.videos_per_class - test_videos_per_class;
    let mut train = FeatureArchive::new(cfg.input_dim)?;
    let mut test = FeatureArchive::new(cfg.input_dim)?;
    generate(cfg, |label, v, frames, pick| {
        if v < n_train {
            let picked = pick(TRAIN_IMAGES_PER_VIDEO);
            push_with_images(&mut train, label, frames, &picked)
        } else {
            let picked = pick(TEST_IMAGES_PER_VIDEO);
            push_with_images(&mut test, label, frames, &picked)
        }
    })?;
    Ok((train, test))
}
