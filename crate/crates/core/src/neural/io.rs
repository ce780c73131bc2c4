//! Binary model files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "CLFM" | version u32 | spec hash u32 | init seed u64 | tensor count u32
//! then per tensor: length u32 | length x f32
//! ```
//!
//! Tensors follow declaration order (`w, b` per layer, convolutions first,
//! head last), then the label scaler's shift and scale.

use std::path::Path;

use super::params::{LabelScaler, ModelParams, Weights};
use super::spec::ModelSpec;
use crate::error::{Error, Result};
use crate::binio::Reader;

pub const MODEL_MAGIC: [u8; 4] = *b"CLFM";
pub const MODEL_VERSION: u32 = 1;

pub fn model_to_bytes(params: &ModelParams<f32>) -> Vec<u8> {
    let tensors: Vec<&Vec<f32>> = params
        .weights
        .tensors()
        .chain([&params.scaler.shift, &params.scaler.scale])
        .collect();
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&params.spec.hash().to_le_bytes());
    out.extend_from_slice(&params.init_seed.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.len() as u32).to_le_bytes());
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decode a model file written for `spec`.
pub fn model_from_bytes(bytes: &[u8], spec: &ModelSpec) -> Result<ModelParams<f32>> {
    let mut r = Reader::new(bytes);
    r.magic(MODEL_MAGIC)?;
    r.version(MODEL_VERSION)?;
    let hash = r.u32()?;
    if hash != spec.hash() {
        return Err(Error::SpecMismatch {
            file: hash,
            expected: spec.hash(),
        });
    }
    let init_seed = r.u64()?;
    let mut weights = Weights::<f32>::zeros_like(spec)?;
    let mut scaler = LabelScaler::<f32>::identity(spec.outputs);
    let count = r.u32()? as usize;
    let expected = weights.tensors().count() + 2;
    if count != expected {
        return Err(Error::Malformed(format!("{count} tensors, expected {expected}")));
    }
    for t in weights
        .tensors_mut()
        .chain([&mut scaler.shift, &mut scaler.scale])
    {
        let len = r.u32()? as usize;
        if len != t.len() {
            return Err(Error::Malformed(format!("tensor of {len} values, expected {}", t.len())));
        }
        for v in t.iter_mut() {
            *v = r.f32()?;
        }
    }
    if !r.is_empty() {
        return Err(Error::Malformed(format!("{} trailing bytes", r.remaining())));
    }
    Ok(ModelParams {
        spec: spec.clone(),
        weights,
        scaler,
        init_seed,
    })
}

pub fn save_model(params: &ModelParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_bytes(params))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>, spec: &ModelSpec) -> Result<ModelParams<f32>> {
    model_from_bytes(&std::fs::read(path)?, spec)
}
