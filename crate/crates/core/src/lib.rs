//! Heterogeneous image/video hashing into a shared Hamming space.
//!
//! Videos are pooled into log-covariance matrices on the SPD manifold
//! ([`covpool`]), images stay as vectors, and two sigmoid hash heads
//! ([`hashnet`]) map both into relaxed `K`-bit codes trained with a
//! three-term triplet objective ([`objective`], [`trainer`]). Retrieval and
//! mAP evaluation live in [`retrieval`] and [`eval`].
//!
//! The crate is `no_std` and only needs `alloc`.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod covpool;
pub mod data;
pub mod error;
pub mod eval;
pub mod hashnet;
pub mod linalg;
pub mod objective;
pub mod retrieval;
pub mod rng;
pub mod trainer;

pub use data::{Dataset, Modality, Sample};
pub use error::{Error, Result};
pub use hashnet::{BinaryCode, Model, ModelShape, RelaxedCode};
pub use linalg::Matrix;
