//! Model file:
//!
//! ```text
//! "FAGM" | version u8 = 1 | d u32 | k u32 | encoder layers u32 | decoder layers u32 |
//!   age_scale f64 | per layer (encoder first): weights f64 row-major, bias f64
//! ```
//! Little-endian throughout. Layer shapes follow from `d`, `k` and the counts.

use std::io::{Read, Write};
use std::path::Path;

use super::{chain_shapes, AgeProgressionModel, LinearLayer, ModelError};
use crate::linalg::Matrix;
use crate::store::bin::Cursor;
use crate::store::StoreError;

pub const MODEL_MAGIC: &[u8; 4] = b"FAGM";
pub const MODEL_VERSION: u8 = 1;

// generous bound so corrupt headers cannot request absurd allocations
const MAX_LAYERS: u32 = 1024;

pub fn save_model(m: &AgeProgressionModel) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.push(MODEL_VERSION);
    buf.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.latent_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.encoder().len() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.decoder().len() as u32).to_le_bytes());
    buf.extend_from_slice(&m.age_scale().to_le_bytes());
    for layer in m.layers() {
        for x in layer.weight.as_slice().iter().chain(&layer.bias) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

fn corrupt(e: StoreError) -> ModelError {
    match e {
        StoreError::Truncated(what) => ModelError::Corrupt(format!("truncated while reading {what}")),
        other => ModelError::Corrupt(other.to_string()),
    }
}

pub fn load_model<R: Read>(mut reader: R) -> Result<AgeProgressionModel, ModelError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let mut cur = Cursor::new(&bytes);

    let magic = cur.take(4, "magic").map_err(corrupt)?;
    if magic != MODEL_MAGIC {
        return Err(ModelError::Corrupt("missing FAGM magic".into()));
    }
    let version = cur.u8("version").map_err(corrupt)?;
    if version != MODEL_VERSION {
        return Err(ModelError::VersionMismatch(version));
    }
    let dim = cur.u32("d").map_err(corrupt)?;
    let k = cur.u32("k").map_err(corrupt)?;
    let n_enc = cur.u32("encoder layer count").map_err(corrupt)?;
    let n_dec = cur.u32("decoder layer count").map_err(corrupt)?;
    let age_scale = cur.f64("age scale").map_err(corrupt)?;
    if dim == 0 || k == 0 || n_enc == 0 || n_dec == 0 || n_enc > MAX_LAYERS || n_dec > MAX_LAYERS {
        return Err(ModelError::InvalidLayerSpec(format!(
            "d={dim} k={k} encoder={n_enc} decoder={n_dec}"
        )));
    }

    let shapes = chain_shapes(dim as usize, k as usize, n_enc as usize, n_dec as usize);
    let needed: u128 = shapes.iter().map(|&(o, i)| (o as u128) * (i as u128 + 1) * 8).sum();
    if needed != cur.remaining() as u128 {
        return Err(ModelError::Corrupt(format!(
            "expected {needed} parameter bytes, found {}",
            cur.remaining()
        )));
    }
    let mut layers = Vec::with_capacity(shapes.len());
    for (out_dim, in_dim) in shapes {
        let w = (0..out_dim * in_dim)
            .map(|_| cur.f64("weights"))
            .collect::<Result<Vec<_>, _>>()
            .map_err(corrupt)?;
        let b = (0..out_dim)
            .map(|_| cur.f64("bias"))
            .collect::<Result<Vec<_>, _>>()
            .map_err(corrupt)?;
        layers.push(LinearLayer::new(Matrix::from_vec(out_dim, in_dim, w), b));
    }
    let decoder = layers.split_off(n_enc as usize);
    AgeProgressionModel::from_layers(dim as usize, k as usize, age_scale, layers, decoder)
}

pub fn write_model_file(m: &AgeProgressionModel, path: &Path) -> Result<(), ModelError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&save_model(m))?;
    f.flush()?;
    Ok(())
}

pub fn read_model_file(path: &Path) -> Result<AgeProgressionModel, ModelError> {
    load_model(std::fs::File::open(path)?)
}
