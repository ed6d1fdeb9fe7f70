//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "CTMS" | u32 version | u32 len, config (key=value text)
//! u32 tensor count, then per tensor:
//!     u32 len, name | u32 rank | u32 dim * rank | f32 value * numel
//! f64 lr | u64 step | u32 bad evals | u32 epoch | f64 best valid ppl
//! u64 vocabulary digest
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::OptimizerState;
use crate::kv::KvMap;
use crate::model::{LanguageModel, ModelConfig, ModelParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CTMS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("vocabulary digest {found:016x} does not match expected {expected:016x}")]
    Digest { expected: u64, found: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: LanguageModel,
    pub optimizer: OptimizerState,
    pub vocab_digest: u64,
}

impl Checkpoint {
    pub fn check_digest(&self, expected: u64) -> Result<(), CheckpointError> {
        if self.vocab_digest == expected {
            Ok(())
        } else {
            Err(CheckpointError::Digest {
                expected,
                found: self.vocab_digest,
            })
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let config = self.model.config.to_kv().render();
        put_u32(&mut out, config.len());
        out.extend_from_slice(config.as_bytes());
        let named = self.model.params.named();
        put_u32(&mut out, named.len());
        for (name, t) in named {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.rank());
            for &d in t.shape() {
                put_u32(&mut out, d);
            }
            for &x in t.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        let o = &self.optimizer;
        out.extend_from_slice(&o.lr.to_le_bytes());
        out.extend_from_slice(&o.step.to_le_bytes());
        out.extend_from_slice(&o.bad_evals.to_le_bytes());
        out.extend_from_slice(&o.epoch.to_le_bytes());
        out.extend_from_slice(&o.best_valid.to_le_bytes());
        out.extend_from_slice(&self.vocab_digest.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version { found: version });
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::Malformed("config block is not UTF-8".into()))?;
        let kv = KvMap::parse(text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let config = ModelConfig::from_kv(&kv).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let mut params = ModelParams::zeros(&config).map_err(|e| CheckpointError::Malformed(e.to_string()))?;

        let names: Vec<(String, Vec<usize>)> = params
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        let count = r.u32()? as usize;
        if count != names.len() {
            return Err(CheckpointError::Malformed(format!(
                "{count} tensors stored, configuration declares {}",
                names.len()
            )));
        }
        for ((name, shape), slot) in names.iter().zip(params.tensors_mut()) {
            let len = r.u32()? as usize;
            let stored = r.take(len)?;
            if stored != name.as_bytes() {
                return Err(CheckpointError::Malformed(format!(
                    "expected tensor {name}, found {:?}",
                    String::from_utf8_lossy(stored)
                )));
            }
            let rank = r.u32()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32()? as usize);
            }
            if &dims != shape {
                return Err(CheckpointError::Malformed(format!(
                    "tensor {name} has shape {dims:?}, expected {shape:?}"
                )));
            }
            let numel: usize = dims.iter().product();
            let raw = r.take(numel * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            *slot = Tensor::new(dims, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        }
        let optimizer = OptimizerState {
            lr: r.f64()?,
            step: r.u64()?,
            bad_evals: r.u32()?,
            epoch: r.u32()?,
            best_valid: r.f64()?,
        };
        let vocab_digest = r.u64()?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            model: LanguageModel { config, params },
            optimizer,
            vocab_digest,
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Writes to a sibling temporary file, then renames it over `path`.
pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, checkpoint.to_bytes()).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}
