//! Checkpoint file: one compact JSON header line (format name, version,
//! config echo, tensor manifest), a newline, then every parameter tensor as
//! raw little-endian f64 in declaration order.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::nets::Model;
use super::ModelConfig;

const FORMAT_NAME: &str = "flowseg-checkpoint";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let params = model.named_parameters();
    let header = Header {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        config: model.config.clone(),
        tensors: params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let mut file = fs::File::create(path)?;
    serde_json::to_writer(&mut file, &header)?;
    file.write_all(b"\n")?;
    for (_, tensor) in &params {
        for v in tensor.data().iter() {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.format != FORMAT_NAME {
        return Err(Error::Checkpoint(format!("unknown format `{}`", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", header.version)));
    }
    header.config.validate()?;

    // Reconstruct the parameter skeleton, then overwrite every tensor.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = Model::init(&header.config, &mut rng)?;
    let params = model.named_parameters();
    if params.len() != header.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "header lists {} tensors, config implies {}",
            header.tensors.len(),
            params.len()
        )));
    }
    let expected_floats: usize = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    let payload = &bytes[newline + 1..];
    if payload.len() != expected_floats * 8 {
        return Err(Error::TruncatedData {
            file: path.display().to_string(),
            expected: (expected_floats * 8) as u64,
            actual: payload.len() as u64,
        });
    }
    let mut offset = 0usize;
    for ((name, tensor), entry) in params.iter().zip(&header.tensors) {
        if name != &entry.name || tensor.shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` {:?} does not match expected `{name}` {:?}",
                entry.name,
                entry.shape,
                tensor.shape()
            )));
        }
        let count = tensor.numel();
        let mut values = Vec::with_capacity(count);
        for i in 0..count {
            let at = offset + i * 8;
            values.push(f64::from_le_bytes(payload[at..at + 8].try_into().unwrap()));
        }
        tensor.set_data(values)?;
        offset += count * 8;
    }
    Ok(model)
}
