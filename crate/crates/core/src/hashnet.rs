//! Two-branch hash network.
//!
//! A shared affine encoder maps raw descriptors (images and video frames
//! alike) to `d` features. Images go straight to the Euclidean head; the
//! encoded frames of a video are stacked into `D`, pooled by
//! [`covpool::pool_forward`], vectorised row-major into `d^2` values and fed
//! to the Riemannian head. Both heads are affine + sigmoid and emit relaxed
//! codes in `(0, 1)^K`.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::covpool::{self, PoolCache, SpectrumPolicy};
use crate::data::{Modality, Sample};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::rng::uniform_matrix;

/// Output nonlinearity of the shared encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
}

impl Activation {
    pub fn code(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelShape {
    /// Raw descriptor length `d0`.
    pub input_dim: usize,
    /// Encoded feature length `d`.
    pub feature_dim: usize,
    /// Code length `K`.
    pub code_len: usize,
    pub epsilon: f64,
    pub activation: Activation,
}

/// Weights of the encoder and both heads. Gradients and optimizer state
/// share this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub enc_w: Matrix,
    pub enc_b: Vec<f64>,
    pub img_w: Matrix,
    pub img_b: Vec<f64>,
    pub vid_w: Matrix,
    pub vid_b: Vec<f64>,
}

pub const TENSOR_NAMES: [&str; 6] = ["enc_w", "enc_b", "img_w", "img_b", "vid_w", "vid_b"];

impl Parameters {
    pub fn zeros(shape: &ModelShape) -> Self {
        let (d0, d, k) = (shape.input_dim, shape.feature_dim, shape.code_len);
        Self {
            enc_w: Matrix::zeros(d, d0),
            enc_b: vec![0.0; d],
            img_w: Matrix::zeros(k, d),
            img_b: vec![0.0; k],
            vid_w: Matrix::zeros(k, d * d),
            vid_b: vec![0.0; k],
        }
    }

    /// `(name, values, is_weight)` in checkpoint order.
    pub fn tensors(&self) -> [(&'static str, &[f64], bool); 6] {
        [
            (TENSOR_NAMES[0], self.enc_w.as_slice(), true),
            (TENSOR_NAMES[1], &self.enc_b, false),
            (TENSOR_NAMES[2], self.img_w.as_slice(), true),
            (TENSOR_NAMES[3], &self.img_b, false),
            (TENSOR_NAMES[4], self.vid_w.as_slice(), true),
            (TENSOR_NAMES[5], &self.vid_b, false),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64], bool); 6] {
        [
            (TENSOR_NAMES[0], self.enc_w.as_mut_slice(), true),
            (TENSOR_NAMES[1], &mut self.enc_b, false),
            (TENSOR_NAMES[2], self.img_w.as_mut_slice(), true),
            (TENSOR_NAMES[3], &mut self.img_b, false),
            (TENSOR_NAMES[4], self.vid_w.as_mut_slice(), true),
            (TENSOR_NAMES[5], &mut self.vid_b, false),
        ]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.1.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(
            self.tensors()
                .iter()
                .flat_map(|t| t.1.iter())
                .map(|v| v * v)
                .sum(),
        )
    }

    pub fn scale(&mut self, s: f64) {
        for (_, t, _) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.tensors()
            .iter()
            .find(|t| t.1.iter().any(|v| !v.is_finite()))
            .map(|t| t.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub shape: ModelShape,
    pub params: Parameters,
}

/// Sigmoid outputs in `(0, 1)^K`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedCode(pub Vec<f64>);

impl RelaxedCode {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// `K` bits packed little-end-first into 64-bit words.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryCode {
    words: Vec<u64>,
    len: usize,
}

impl BinaryCode {
    pub fn from_bits(bits: &[bool]) -> Self {
        let mut words = vec![0u64; bits.len().div_ceil(64)];
        for (i, &b) in bits.iter().enumerate() {
            if b {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        Self {
            words,
            len: bits.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.bit(i)).collect()
    }

    pub fn complement(&self) -> Self {
        let bits: Vec<bool> = self.bits().into_iter().map(|b| !b).collect();
        Self::from_bits(&bits)
    }
}

/// Bit `i` is set iff `values[i] >= 0.5`.
pub fn binarize(code: &RelaxedCode) -> BinaryCode {
    let bits: Vec<bool> = code.0.iter().map(|&v| v >= 0.5).collect();
    BinaryCode::from_bits(&bits)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Keeps a relaxed value strictly inside `(0, 1)` even when the sigmoid
/// rounds to an endpoint.
#[inline]
fn open_unit(s: f64) -> f64 {
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Forward state of one image.
#[derive(Debug, Clone)]
pub struct ImageActivation {
    pub input: Vec<f64>,
    pub encoded: Vec<f64>,
    pub code: RelaxedCode,
}

/// Forward state of one video.
#[derive(Debug, Clone)]
pub struct VideoActivation {
    pub frames: Matrix,
    pub pool: PoolCache,
    pub code: RelaxedCode,
}

#[derive(Debug, Clone)]
pub enum Activations {
    Image(ImageActivation),
    Video(Box<VideoActivation>),
}

impl Activations {
    pub fn code(&self) -> &RelaxedCode {
        match self {
            Activations::Image(a) => &a.code,
            Activations::Video(a) => &a.code,
        }
    }
}

fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_out: usize, fan_in: usize) -> Matrix {
    let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    uniform_matrix(rng, fan_out, fan_in, bound)
}

fn head(weight: &Matrix, bias: &[f64], input: &[f64]) -> Result<RelaxedCode> {
    let z = weight.matvec(input)?;
    Ok(RelaxedCode(
        z.iter().zip(bias).map(|(z, b)| open_unit(sigmoid(z + b))).collect(),
    ))
}

impl Model {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(shape: ModelShape, rng: &mut R) -> Result<Self> {
        if shape.input_dim == 0 || shape.feature_dim == 0 || shape.code_len == 0 {
            return Err(Error::InvalidConfig("model dimensions must be positive"));
        }
        if !(shape.epsilon.is_finite() && shape.epsilon > 0.0) {
            return Err(Error::InvalidEpsilon(shape.epsilon));
        }
        let (d0, d, k) = (shape.input_dim, shape.feature_dim, shape.code_len);
        let params = Parameters {
            enc_w: glorot(rng, d, d0),
            enc_b: vec![0.0; d],
            img_w: glorot(rng, k, d),
            img_b: vec![0.0; k],
            vid_w: glorot(rng, k, d * d),
            vid_b: vec![0.0; k],
        };
        Ok(Self { shape, params })
    }

    pub fn from_parameters(shape: ModelShape, params: Parameters) -> Result<Self> {
        let expected = Parameters::zeros(&shape);
        for ((name, a, _), (_, b, _)) in params.tensors().iter().zip(expected.tensors().iter()) {
            if a.len() != b.len() {
                return Err(Error::LengthMismatch {
                    op: name,
                    expected: b.len(),
                    found: a.len(),
                });
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what: name });
            }
        }
        if params.enc_w.shape() != expected.enc_w.shape()
            || params.img_w.shape() != expected.img_w.shape()
            || params.vid_w.shape() != expected.vid_w.shape()
        {
            return Err(Error::InvalidConfig("weight matrix shapes do not match the model shape"));
        }
        Ok(Self { shape, params })
    }

    pub fn code_len(&self) -> usize {
        self.shape.code_len
    }

    /// Shared encoder applied to one descriptor.
    pub fn encode_feature(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.params.enc_w.matvec(x)?;
        for (zi, b) in z.iter_mut().zip(&self.params.enc_b) {
            *zi = self.activate(*zi + b);
        }
        Ok(z)
    }

    fn activate(&self, z: f64) -> f64 {
        match self.shape.activation {
            Activation::Identity => z,
            Activation::Tanh => libm::tanh(z),
        }
    }

    /// Encoder applied to each row of `frames`.
    pub fn encode_frames(&self, frames: &Matrix) -> Result<Matrix> {
        if frames.cols() != self.shape.input_dim {
            return Err(Error::LengthMismatch {
                op: "encode_frames",
                expected: self.shape.input_dim,
                found: frames.cols(),
            });
        }
        let mut out = Matrix::zeros(frames.rows(), self.shape.feature_dim);
        for r in 0..frames.rows() {
            let e = self.encode_feature(frames.row(r))?;
            out.as_mut_slice()[r * self.shape.feature_dim..(r + 1) * self.shape.feature_dim]
                .copy_from_slice(&e);
        }
        Ok(out)
    }

    pub fn forward_image(&self, x: &[f64]) -> Result<ImageActivation> {
        if x.len() != self.shape.input_dim {
            return Err(Error::LengthMismatch {
                op: "forward_image",
                expected: self.shape.input_dim,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "image descriptor" });
        }
        let encoded = self.encode_feature(x)?;
        let code = head(&self.params.img_w, &self.params.img_b, &encoded)?;
        Ok(ImageActivation {
            input: x.to_vec(),
            encoded,
            code,
        })
    }

    pub fn forward_video(&self, frames: &Matrix) -> Result<VideoActivation> {
        if frames.rows() == 0 {
            return Err(Error::EmptyVideo);
        }
        let encoded = self.encode_frames(frames)?;
        let pool = covpool::pool_forward(&encoded, self.shape.epsilon)?;
        let code = head(&self.params.vid_w, &self.params.vid_b, pool.y.as_slice())?;
        Ok(VideoActivation {
            frames: frames.clone(),
            pool,
            code,
        })
    }

    pub fn forward(&self, sample: &Sample) -> Result<Activations> {
        match sample.modality {
            Modality::Image => Ok(Activations::Image(self.forward_image(sample.frames.row(0))?)),
            Modality::Video => Ok(Activations::Video(Box::new(self.forward_video(&sample.frames)?))),
        }
    }

    pub fn encode_sample(&self, sample: &Sample) -> Result<BinaryCode> {
        Ok(binarize(self.forward(sample)?.code()))
    }

    /// Backpropagates `dJ/dcode` for one sample, accumulating parameter
    /// gradients into `grads`. Returns `dJ/d(descriptors)` with the same
    /// shape as the sample's frame matrix.
    pub fn backward(
        &self,
        act: &Activations,
        code_grad: &[f64],
        grads: &mut Parameters,
        policy: SpectrumPolicy,
    ) -> Result<Matrix> {
        let k = self.shape.code_len;
        if code_grad.len() != k {
            return Err(Error::LengthMismatch {
                op: "backward code gradient",
                expected: k,
                found: code_grad.len(),
            });
        }
        let code = act.code().values();
        let dz: Vec<f64> = code_grad
            .iter()
            .zip(code)
            .map(|(g, s)| g * s * (1.0 - s))
            .collect();

        match act {
            Activations::Image(a) => {
                let d_enc = affine_backward(
                    &self.params.img_w,
                    &a.encoded,
                    &dz,
                    &mut grads.img_w,
                    &mut grads.img_b,
                )?;
                let dx = self.encoder_backward(
                    &Matrix::new(1, a.input.len(), a.input.clone())?,
                    &Matrix::new(1, a.encoded.len(), a.encoded.clone())?,
                    Matrix::new(1, d_enc.len(), d_enc)?,
                    grads,
                )?;
                Ok(dx)
            }
            Activations::Video(a) => {
                let d = self.shape.feature_dim;
                let dy = affine_backward(
                    &self.params.vid_w,
                    a.pool.y.as_slice(),
                    &dz,
                    &mut grads.vid_w,
                    &mut grads.vid_b,
                )?;
                let dy = Matrix::new(d, d, dy)?;
                let dd = covpool::pool_backward(&a.pool, &dy, policy)?;
                self.encoder_backward(&a.frames, &a.pool.features, dd, grads)
            }
        }
    }

    /// `frames`: raw `m x d0`; `encoded`: post-activation `m x d`;
    /// `d_encoded`: `dJ/d(encoded)`.
    fn encoder_backward(
        &self,
        frames: &Matrix,
        encoded: &Matrix,
        mut d_encoded: Matrix,
        grads: &mut Parameters,
    ) -> Result<Matrix> {
        if self.shape.activation == Activation::Tanh {
            for (g, e) in d_encoded.as_mut_slice().iter_mut().zip(encoded.as_slice()) {
                *g *= 1.0 - e * e;
            }
        }
        // dW += dZ^T X, db += column sums of dZ
        let dw = d_encoded.tr_matmul(frames)?;
        for (g, v) in grads.enc_w.as_mut_slice().iter_mut().zip(dw.as_slice()) {
            *g += v;
        }
        for r in 0..d_encoded.rows() {
            for (g, v) in grads.enc_b.iter_mut().zip(d_encoded.row(r)) {
                *g += v;
            }
        }
        d_encoded.matmul(&self.params.enc_w)
    }
}

/// Backward through `z = W x + b`; accumulates into `dw`, `db` and returns
/// `W^T dz`.
fn affine_backward(
    w: &Matrix,
    x: &[f64],
    dz: &[f64],
    dw: &mut Matrix,
    db: &mut [f64],
) -> Result<Vec<f64>> {
    let cols = w.cols();
    for (r, &g) in dz.iter().enumerate() {
        db[r] += g;
        if g == 0.0 {
            continue;
        }
        let row = &mut dw.as_mut_slice()[r * cols..(r + 1) * cols];
        for (a, &xi) in row.iter_mut().zip(x) {
            *a += g * xi;
        }
    }
    w.tr_matvec(dz)
}

/// `code . weights`, a linear probe of a relaxed code.
pub fn weighted_code_sum(code: &RelaxedCode, weights: &[f64]) -> f64 {
    dot(code.values(), weights)
}
