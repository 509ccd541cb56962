//! Mini-batch SGD over the joint objective.
//!
//! Each step draws a balanced batch (pick subjects, then video/image pairs
//! per subject), runs both branches forward, evaluates the triplet
//! objective, backpropagates through the heads, the covariance pooling and
//! the shared encoder, and applies momentum SGD with weight decay on
//! weights only.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::covpool::{SpectrumPolicy, DEFAULT_EPSILON};
use crate::data::{Dataset, Modality, Sample};
use crate::error::{Error, Result};
use crate::hashnet::{Activation, Model, ModelShape, Parameters, RelaxedCode, TENSOR_NAMES};
use crate::objective::{batch_objective, BatchObjective, ObjectiveConfig};
use crate::rng::{seeded, SeededRng};

/// Where the image half of each video/image pair comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ImageSource {
    /// A random frame of the paired video.
    #[default]
    VideoFrames,
    /// A random image record of the same subject.
    Archive,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub subjects_per_batch: usize,
    pub pairs_per_subject: usize,
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub code_len: usize,
    pub epsilon: f64,
    /// Encoded feature length `d`.
    pub feature_dim: usize,
    pub activation: Activation,
    pub seed: u64,
    pub spectrum_policy: SpectrumPolicy,
    pub image_source: ImageSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            steps: 2000,
            subjects_per_batch: 6,
            pairs_per_subject: 5,
            alpha: 2.0,
            lambda1: 1.0,
            lambda2: 1.0,
            code_len: 12,
            epsilon: DEFAULT_EPSILON,
            feature_dim: 32,
            activation: Activation::Identity,
            seed: 0,
            spectrum_policy: SpectrumPolicy::Clamp,
            image_source: ImageSource::VideoFrames,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weight_decay must be non-negative"));
        }
        if self.subjects_per_batch < 2 {
            return Err(Error::InvalidConfig("subjects_per_batch must be at least 2"));
        }
        if self.pairs_per_subject < 1 {
            return Err(Error::InvalidConfig("pairs_per_subject must be at least 1"));
        }
        if self.code_len == 0 || self.feature_dim == 0 {
            return Err(Error::InvalidConfig("code_len and feature_dim must be positive"));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidEpsilon(self.epsilon));
        }
        self.objective().validate()
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            alpha: self.alpha,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }

    pub fn model_shape(&self, input_dim: usize) -> ModelShape {
        ModelShape {
            input_dim,
            feature_dim: self.feature_dim,
            code_len: self.code_len,
            epsilon: self.epsilon,
            activation: self.activation,
        }
    }
}

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl From<&TrainConfig> for SgdConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            learning_rate: c.learning_rate,
            momentum: c.momentum,
            weight_decay: c.weight_decay,
        }
    }
}

/// `v <- momentum * v - lr * (g + wd * theta)`, `theta <- theta + v`.
/// Decay applies to weight matrices only.
pub fn sgd_step(
    params: &mut Parameters,
    grads: &Parameters,
    velocity: &mut Parameters,
    cfg: &SgdConfig,
) -> Result<()> {
    let g_tensors = grads.tensors();
    for ((i, (name, theta, is_weight)), (_, vel, _)) in params
        .tensors_mut()
        .into_iter()
        .enumerate()
        .zip(velocity.tensors_mut())
    {
        let g = g_tensors[i].1;
        if g.len() != theta.len() || vel.len() != theta.len() {
            return Err(Error::LengthMismatch {
                op: name,
                expected: theta.len(),
                found: if g.len() != theta.len() { g.len() } else { vel.len() },
            });
        }
        let wd = if is_weight { cfg.weight_decay } else { 0.0 };
        for ((t, v), &gi) in theta.iter_mut().zip(vel.iter_mut()).zip(g) {
            *v = cfg.momentum * *v - cfg.learning_rate * (gi + wd * *t);
            *t += *v;
        }
    }
    Ok(())
}

/// Per-subject sample indices.
#[derive(Debug, Clone, Default)]
pub struct SubjectIndex {
    videos: BTreeMap<u32, Vec<usize>>,
    images: BTreeMap<u32, Vec<usize>>,
}

impl SubjectIndex {
    pub fn new(dataset: &Dataset) -> Self {
        let mut idx = Self::default();
        for (i, s) in dataset.samples.iter().enumerate() {
            let map = match s.modality {
                Modality::Video => &mut idx.videos,
                Modality::Image => &mut idx.images,
            };
            map.entry(s.label).or_default().push(i);
        }
        idx
    }
}

/// A training batch; `sources[i]` is the dataset index `samples[i]` came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub samples: Vec<Sample>,
    pub sources: Vec<usize>,
}

impl Batch {
    pub fn labels(&self) -> Vec<u32> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.samples.iter().map(|s| s.modality).collect()
    }
}

/// Second-order sampling: `subjects` distinct subjects uniformly without
/// replacement, then `pairs` distinct videos per subject, each paired with
/// an image of the same subject.
pub fn sample_batch<R: Rng + ?Sized>(
    dataset: &Dataset,
    subjects_index: &SubjectIndex,
    subjects: usize,
    pairs: usize,
    image_source: ImageSource,
    rng: &mut R,
) -> Result<Batch> {
    let all_subjects: Vec<u32> = dataset.labels();
    let eligible: Vec<u32> = subjects_index
        .videos
        .iter()
        .filter(|(label, v)| {
            v.len() >= pairs
                && (image_source == ImageSource::VideoFrames
                    || subjects_index.images.get(label).is_some_and(|i| !i.is_empty()))
        })
        .map(|(&l, _)| l)
        .collect();
    if eligible.len() < subjects {
        if all_subjects.len() >= subjects {
            let short = all_subjects
                .iter()
                .copied()
                .find(|l| !eligible.contains(l))
                .unwrap_or_default();
            return Err(Error::InsufficientVideos {
                label: short,
                needed: pairs,
                found: subjects_index.videos.get(&short).map_or(0, Vec::len),
            });
        }
        return Err(Error::InsufficientSubjects {
            needed: subjects,
            found: eligible.len(),
        });
    }

    let mut samples = Vec::with_capacity(2 * subjects * pairs);
    let mut sources = Vec::with_capacity(2 * subjects * pairs);
    for si in index::sample(rng, eligible.len(), subjects) {
        let label = eligible[si];
        let videos = &subjects_index.videos[&label];
        for vi in index::sample(rng, videos.len(), pairs) {
            let src = videos[vi];
            let video = &dataset.samples[src];
            samples.push(video.clone());
            sources.push(src);
            match image_source {
                ImageSource::VideoFrames => {
                    let f = rng.random_range(0..video.frame_count());
                    samples.push(Sample::image(label, video.frames.row(f).to_vec())?);
                    sources.push(src);
                }
                ImageSource::Archive => {
                    let images = &subjects_index.images[&label];
                    let img = images[rng.random_range(0..images.len())];
                    samples.push(dataset.samples[img].clone());
                    sources.push(img);
                }
            }
        }
    }
    Ok(Batch { samples, sources })
}

/// Objective value and parameter gradients of `model` on `samples`.
pub fn batch_gradients(
    model: &Model,
    samples: &[Sample],
    objective: &ObjectiveConfig,
    policy: SpectrumPolicy,
) -> Result<(BatchObjective, Parameters)> {
    let acts = samples
        .iter()
        .map(|s| model.forward(s))
        .collect::<Result<Vec<_>>>()?;
    let codes: Vec<RelaxedCode> = acts.iter().map(|a| a.code().clone()).collect();
    let labels: Vec<u32> = samples.iter().map(|s| s.label).collect();
    let modalities: Vec<Modality> = samples.iter().map(|s| s.modality).collect();
    let obj = batch_objective(&codes, &labels, &modalities, objective)?;
    let mut grads = Parameters::zeros(&model.shape);
    for (act, g) in acts.iter().zip(&obj.code_grads) {
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        model.backward(act, g, &mut grads, policy)?;
    }
    if let Some(tensor) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient { tensor });
    }
    Ok((obj, grads))
}

/// Objective value only.
pub fn batch_loss(model: &Model, samples: &[Sample], objective: &ObjectiveConfig) -> Result<f64> {
    let codes = samples
        .iter()
        .map(|s| Ok(model.forward(s)?.code().clone()))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<u32> = samples.iter().map(|s| s.label).collect();
    let modalities: Vec<Modality> = samples.iter().map(|s| s.modality).collect();
    Ok(batch_objective(&codes, &labels, &modalities, objective)?.total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub objective: f64,
    pub inter: f64,
    pub intra_image: f64,
    pub intra_video: f64,
    pub active_inter: f64,
    pub active_image: f64,
    pub active_video: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
}

pub struct Trainer<'a> {
    dataset: &'a Dataset,
    subjects: SubjectIndex,
    cfg: TrainConfig,
    model: Model,
    velocity: Parameters,
    rng: SeededRng,
    step: usize,
    history: TrainHistory,
}

impl<'a> Trainer<'a> {
    /// Initializes the model from `cfg.seed`.
    pub fn new(dataset: &'a Dataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded(cfg.seed);
        let model = Model::init(cfg.model_shape(dataset.input_dim), &mut rng)?;
        Self::with_model(dataset, cfg, model, rng)
    }

    fn with_model(dataset: &'a Dataset, cfg: TrainConfig, model: Model, rng: SeededRng) -> Result<Self> {
        let velocity = Parameters::zeros(&model.shape);
        Ok(Self {
            dataset,
            subjects: SubjectIndex::new(dataset),
            cfg,
            model,
            velocity,
            rng,
            step: 0,
            history: TrainHistory::default(),
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        sample_batch(
            self.dataset,
            &self.subjects,
            self.cfg.subjects_per_batch,
            self.cfg.pairs_per_subject,
            self.cfg.image_source,
            &mut self.rng,
        )
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let step = self.step;
        let at = |e: Error| Error::AtStep {
            step,
            source: Box::new(e),
        };
        let batch = self.next_batch().map_err(at)?;
        let (obj, grads) = batch_gradients(
            &self.model,
            &batch.samples,
            &self.cfg.objective(),
            self.cfg.spectrum_policy,
        )
        .map_err(at)?;
        sgd_step(
            &mut self.model.params,
            &grads,
            &mut self.velocity,
            &SgdConfig::from(&self.cfg),
        )
        .map_err(at)?;
        if let Some(tensor) = self.model.params.first_non_finite() {
            return Err(at(Error::NonFinite { what: tensor }));
        }
        let rec = StepRecord {
            step,
            objective: obj.total,
            inter: obj.inter.mean_loss,
            intra_image: obj.intra_image.mean_loss,
            intra_video: obj.intra_video.mean_loss,
            active_inter: obj.inter.active_fraction,
            active_image: obj.intra_image.active_fraction,
            active_video: obj.intra_video.active_fraction,
            grad_norm: grads.norm(),
        };
        self.history.records.push(rec);
        self.step += 1;
        Ok(rec)
    }

    pub fn finish(self) -> (Model, TrainHistory) {
        (self.model, self.history)
    }
}

/// Runs `cfg.steps` iterations from a seeded initialization.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    let mut t = Trainer::new(dataset, cfg.clone())?;
    for _ in 0..cfg.steps {
        t.step()?;
    }
    Ok(t.finish())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
    /// Flat index of the worst entry.
    pub argmax: usize,
}

/// Finite-difference check of every parameter gradient of the batch
/// objective. Relative error is normalised by `max(|a|, |n|, 1e-8)`.
pub fn model_grad_check(
    model: &Model,
    samples: &[Sample],
    objective: &ObjectiveConfig,
    step: f64,
) -> Result<Vec<TensorCheck>> {
    let (_, analytic) = batch_gradients(model, samples, objective, SpectrumPolicy::Error)?;
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(TENSOR_NAMES.len());
    for (t, &name) in TENSOR_NAMES.iter().enumerate() {
        let len = analytic.tensors()[t].1.len();
        let mut worst = TensorCheck {
            name,
            max_rel_err: 0.0,
            argmax: 0,
        };
        for i in 0..len {
            let x0 = probe.params.tensors()[t].1[i];
            probe.params.tensors_mut()[t].1[i] = x0 + step;
            let up = batch_loss(&probe, samples, objective)?;
            probe.params.tensors_mut()[t].1[i] = x0 - step;
            let down = batch_loss(&probe, samples, objective)?;
            probe.params.tensors_mut()[t].1[i] = x0;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.tensors()[t].1[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst.max_rel_err {
                worst.max_rel_err = rel;
                worst.argmax = i;
            }
        }
        out.push(worst);
    }
    Ok(out)
}
