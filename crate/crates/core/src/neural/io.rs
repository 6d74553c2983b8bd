//! Model container.
//!
//! ```text
//! magic       8 bytes   "MMFMODEL"
//! version     u32 LE
//! header_len  u64 LE
//! header      header_len bytes of UTF-8 JSON
//! tensors     f64 LE, concatenated in the order listed by the header
//! ```
//!
//! The header carries the network spec, mode, seed, an opaque training
//! configuration and the tensor table (`name`, `shape`). Decoding checks the
//! tensor table against the layer sizes and requires the payload to match exactly.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{BatchNorm, Dense, MlpModel, MlpSpec, Mode};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"MMFMODEL";
pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAX_HEADER: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: MlpModel,
    pub seed: u64,
    pub train_config: Option<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    spec: MlpSpec,
    mode: Mode,
    seed: u64,
    #[serde(default)]
    train_config: Option<serde_json::Value>,
    tensors: Vec<TensorEntry>,
}

pub fn save_model(file: &ModelFile) -> Result<Vec<u8>> {
    let tensors = file.model.tensors();
    let header = Header {
        spec: file.model.spec.clone(),
        mode: file.model.mode,
        seed: file.seed,
        train_config: file.train_config.clone(),
        tensors: tensors
            .iter()
            .map(|(name, shape, _)| TensorEntry { name: name.clone(), shape: shape.clone() })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let payload: usize = tensors.iter().map(|(_, _, d)| d.len() * 8).sum();
    let mut out = Vec::with_capacity(20 + json.len() + payload);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, data) in tensors {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Tensor names and shapes a spec requires, in container order.
fn expected_tensors(spec: &MlpSpec) -> Result<Vec<(String, Vec<usize>)>> {
    let mut out = Vec::new();
    for (l, w) in spec.layer_sizes.windows(2).enumerate() {
        out.push((format!("fc{l}.weight"), vec![w[0], w[1]]));
        out.push((format!("fc{l}.bias"), vec![w[1]]));
        if spec.batch_norm.get(l).copied().unwrap_or(false) {
            for name in ["gamma", "beta", "running_mean", "running_var"] {
                out.push((format!("bn{l}.{name}"), vec![w[1]]));
            }
        }
    }
    Ok(out)
}

fn read_array<const N: usize>(bytes: &[u8], at: usize) -> Result<[u8; N]> {
    bytes
        .get(at..at + N)
        .and_then(|s| s.try_into().ok())
        .ok_or_else(|| Error::Format("model file truncated".into()))
}

pub fn load_model(bytes: &[u8]) -> Result<ModelFile> {
    if read_array::<8>(bytes, 0)? != *MODEL_MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(read_array(bytes, 8)?);
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported model format version {version}")));
    }
    let header_len = u64::from_le_bytes(read_array(bytes, 12)?);
    if header_len > MAX_HEADER || header_len as usize > bytes.len() - 20 {
        return Err(Error::Format(format!("header length {header_len} exceeds file")));
    }
    let header_end = 20 + header_len as usize;
    let header: Header = serde_json::from_slice(&bytes[20..header_end])?;
    header.spec.validate()?;

    let expected = expected_tensors(&header.spec)?;
    if expected.len() != header.tensors.len()
        || expected.iter().zip(&header.tensors).any(|((n, s), t)| *n != t.name || *s != t.shape)
    {
        return Err(Error::Format("tensor table does not match the network spec".into()));
    }
    let mut total: usize = 0;
    for (_, shape) in &expected {
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
        total = total
            .checked_add(count)
            .filter(|t| t.checked_mul(8).is_some())
            .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
    }
    let payload = &bytes[header_end..];
    if payload.len() != total * 8 {
        return Err(Error::Format(format!(
            "payload holds {} bytes, tensor table needs {}",
            payload.len(),
            total * 8
        )));
    }

    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };
    let spec = header.spec;
    let mut layers = Vec::new();
    let mut norms = Vec::new();
    for (l, w) in spec.layer_sizes.windows(2).enumerate() {
        let weight = Array2::from_shape_vec((w[0], w[1]), take(w[0] * w[1])).map_err(|e| Error::Format(e.to_string()))?;
        let bias = Array1::from_vec(take(w[1]));
        layers.push(Dense { weight, bias });
        if l < spec.hidden_count() {
            norms.push(spec.batch_norm[l].then(|| BatchNorm {
                gamma: Array1::from_vec(take(w[1])),
                beta: Array1::from_vec(take(w[1])),
                running_mean: Array1::from_vec(take(w[1])),
                running_var: Array1::from_vec(take(w[1])),
            }));
        }
    }
    for bn in norms.iter().flatten() {
        if bn.running_var.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Format("batch-norm running variance must be positive".into()));
        }
    }
    Ok(ModelFile {
        model: MlpModel { spec, layers, norms, mode: header.mode },
        seed: header.seed,
        train_config: header.train_config,
    })
}
