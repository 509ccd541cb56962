//! Model checkpoint (`SPDM`).
//!
//! ```text
//! magic "SPDM" | version u32 | d0 u32 | d u32 | K u32 | activation u32 | epsilon f64
//! enc_w | enc_b | img_w | img_b | vid_w | vid_b        (f64 each, row-major)
//! ```
//!
//! `activation` is 0 for the affine encoder and 1 for the tanh variant.

use std::fs;
use std::path::Path;

use spdhash_core::hashnet::{Activation, Parameters};
use spdhash_core::{Model, ModelShape};

use crate::bytes::Reader;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SPDM";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_HEADER_LEN: usize = 32;

pub fn checkpoint_bytes(model: &Model) -> Vec<u8> {
    let s = &model.shape;
    let mut out = Vec::with_capacity(CHECKPOINT_HEADER_LEN + 8 * model.params.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [s.input_dim, s.feature_dim, s.code_len] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&s.activation.code().to_le_bytes());
    out.extend_from_slice(&s.epsilon.to_le_bytes());
    for (_, t, _) in model.params.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<Model> {
    let mut r = Reader::new(buf);
    let magic = r.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::CorruptHeader(format!(
            "bad magic {magic:02x?}, expected \"SPDM\""
        )));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let input_dim = r.u32()? as usize;
    let feature_dim = r.u32()? as usize;
    let code_len = r.u32()? as usize;
    let act = r.u32()?;
    let epsilon = r.f64()?;
    let activation = Activation::from_code(act)
        .ok_or_else(|| Error::CorruptHeader(format!("unknown activation code {act}")))?;
    if input_dim == 0 || feature_dim == 0 || code_len == 0 {
        return Err(Error::CorruptHeader(format!(
            "zero dimension in d0={input_dim} d={feature_dim} K={code_len}"
        )));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::CorruptHeader(format!("epsilon {epsilon} is not positive")));
    }
    let shape = ModelShape {
        input_dim,
        feature_dim,
        code_len,
        epsilon,
        activation,
    };
    let mut params = Parameters::zeros(&shape);
    r.require(8 * params.len() as u64)?;
    for (_, t, _) in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = r.f64()?;
        }
    }
    r.finish()?;
    if let Some(name) = params.first_non_finite() {
        return Err(Error::CorruptRecord {
            index: 0,
            reason: format!("non-finite value in {name}"),
        });
    }
    Ok(Model::from_parameters(shape, params)?)
}

pub fn write_checkpoint(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Model> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&buf)
}
