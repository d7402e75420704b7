//! Binary checkpoint format.
//!
//! ```text
//! "BATT" | u32 version | u32 tensor count
//! per tensor: u16 name length | name (UTF-8) | u8 rank | u32 dims… | f32 values…
//! u32 CRC32 of everything before it
//! ```
//!
//! All integers and floats are little-endian. Model configuration and the
//! training fingerprint travel as two extra tensors (`meta.*`) whose values
//! are 16-bit chunks of the underlying integers, exact in f32.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::model::{ModelConfig, ModelError, ModelParams};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"BATT";
pub const VERSION: u32 = 1;
const META_MODEL: &str = "meta.model_config";
const META_TRAINING: &str = "meta.training";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (this build reads {VERSION})")]
    Version { found: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch (file corrupted)")]
    Checksum,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint shape mismatch: tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint does not match the model: {0}")]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Provenance stored alongside the weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub seed: u64,
    /// Epoch the weights come from; 0 is the initialization.
    pub epoch: u64,
    pub config_hash: u64,
    pub feature_fingerprint: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub params: ModelParams<f32>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn config(&self) -> &ModelConfig {
        self.params.config()
    }
}

fn halves(values: &[u64]) -> Vec<f32> {
    values
        .iter()
        .flat_map(|v| (0..4).map(move |k| ((v >> (16 * k)) & 0xFFFF) as f32))
        .collect()
}

fn unhalves(t: &Tensor<f32>, name: &str) -> Result<Vec<u64>, CheckpointError> {
    if t.len() % 4 != 0 {
        return Err(CheckpointError::Malformed(format!("`{name}` length {}", t.len())));
    }
    t.data()
        .chunks(4)
        .map(|c| {
            c.iter().enumerate().try_fold(0u64, |acc, (k, &h)| {
                if h.fract() != 0.0 || !(0.0..65536.0).contains(&h) {
                    return Err(CheckpointError::Malformed(format!("`{name}` holds {h}")));
                }
                Ok(acc | (h as u64) << (16 * k))
            })
        })
        .collect()
}

fn config_values(c: &ModelConfig) -> [u64; 6] {
    [
        c.input_dim,
        c.hidden_dim,
        c.num_layers,
        c.context_dim,
        c.num_classes,
        c.attention_iterations,
    ]
    .map(|v| v as u64)
}

pub fn encode_checkpoint(params: &ModelParams<f32>, meta: &CheckpointMeta) -> Vec<u8> {
    let mut tensors: BTreeMap<String, Tensor<f32>> = params.tensors().clone();
    let cfg = halves(&config_values(params.config()));
    let train = halves(&[meta.seed, meta.epoch, meta.config_hash, meta.feature_fingerprint]);
    tensors.insert(META_MODEL.into(), Tensor::row(cfg));
    tensors.insert(META_TRAINING.into(), Tensor::row(train));

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let s = self
            .bytes
            .get(self.at..self.at + n)
            .ok_or(CheckpointError::Truncated)?;
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parses a checkpoint. With `expected`, every tensor shape is checked
/// against that configuration before anything else.
pub fn decode_checkpoint(
    bytes: &[u8],
    expected: Option<&ModelConfig>,
) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 4 {
        return Err(if MAGIC.starts_with(bytes) {
            CheckpointError::Truncated
        } else {
            CheckpointError::BadMagic
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader { bytes, at: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let count = r.u32()? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = dims.iter().product();
        let data = r
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(CheckpointError::Malformed(format!("tensor `{name}` appears twice")));
        }
    }
    let body_end = r.at;
    let stored = r.u32()?;
    if r.at != bytes.len() {
        return Err(CheckpointError::Malformed("trailing bytes after checksum".into()));
    }
    if crc32fast::hash(&bytes[..body_end]) != stored {
        return Err(CheckpointError::Checksum);
    }

    let mut meta_tensor = |name: &str| {
        tensors
            .remove(name)
            .ok_or_else(|| CheckpointError::Malformed(format!("missing `{name}`")))
            .and_then(|t| unhalves(&t, name))
    };
    let cfg = meta_tensor(META_MODEL)?;
    let train = meta_tensor(META_TRAINING)?;
    let [input_dim, hidden_dim, num_layers, context_dim, num_classes, attention_iterations] =
        cfg[..]
    else {
        return Err(CheckpointError::Malformed("model config has wrong length".into()));
    };
    let [seed, epoch, config_hash, feature_fingerprint] = train[..] else {
        return Err(CheckpointError::Malformed("training metadata has wrong length".into()));
    };
    let stored_cfg = ModelConfig {
        input_dim: input_dim as usize,
        hidden_dim: hidden_dim as usize,
        num_layers: num_layers as usize,
        context_dim: context_dim as usize,
        num_classes: num_classes as usize,
        attention_iterations: attention_iterations as usize,
    };
    let cfg = expected.copied().unwrap_or(stored_cfg);
    for spec in cfg.param_specs() {
        if let Some(t) = tensors.get(&spec.name) {
            if t.dims() != spec.dims {
                return Err(CheckpointError::ShapeMismatch {
                    name: spec.name,
                    expected: spec.dims.to_vec(),
                    found: t.dims().to_vec(),
                });
            }
        }
    }
    if cfg != stored_cfg {
        return Err(CheckpointError::Malformed(format!(
            "embedded model config {stored_cfg:?} differs from {cfg:?}"
        )));
    }
    Ok(Checkpoint {
        version,
        params: ModelParams::from_tensors(cfg, tensors)?,
        meta: CheckpointMeta {
            seed,
            epoch,
            config_hash,
            feature_fingerprint,
        },
    })
}

pub fn save_checkpoint(
    params: &ModelParams<f32>,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<(), CheckpointError> {
    std::fs::write(path, encode_checkpoint(params, meta))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    decode_checkpoint(&std::fs::read(path)?, None)
}

/// Loads and checks the tensors against a model configuration.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<Checkpoint, CheckpointError> {
    decode_checkpoint(&std::fs::read(path)?, Some(expected))
}
