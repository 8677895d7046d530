//! Binary checkpoint files.
//!
//! Little-endian layout:
//!
//! ```text
//! "LDXC" | version: u32 = 1 | meta_len: u64 | meta JSON
//! tensor_count: u32 | per tensor: name_len: u16, name, ndim: u8, dims: u32 × ndim, f32 × numel
//! ```
//!
//! The meta JSON holds the model configuration, the task and the loss history.

use std::collections::HashSet;
use std::io::{self, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Task;
use crate::model::{ModelConfig, ModelState};
use crate::numerics::Tensor;

pub const MAGIC: [u8; 4] = *b"LDXC";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint integrity error: {0}")]
    Integrity(String),
    #[error("checkpoint I/O error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelState,
    pub task: Task,
    /// Mean loss of every optimizer step, in order.
    pub history: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: ModelConfig,
    task: Task,
    history: Vec<f32>,
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    std::fs::write(path, encode_checkpoint(checkpoint)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    decode_checkpoint(&std::fs::read(path)?)
}

pub fn encode_checkpoint(checkpoint: &Checkpoint) -> Result<Vec<u8>, CheckpointError> {
    let meta = serde_json::to_vec(&Meta {
        config: checkpoint.model.config().clone(),
        task: checkpoint.task,
        history: checkpoint.history.clone(),
    })
    .map_err(|e| CheckpointError::Format(e.to_string()))?;
    let params = checkpoint.model.params();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, p) in params.iter() {
        let name_len = u16::try_from(p.name.len())
            .map_err(|_| CheckpointError::Format(format!("tensor name too long: {}", p.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.tensor.ndim() as u8);
        for &d in p.tensor.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in p.tensor.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    rest: &'a [u8],
}

impl Reader<'_> {
    fn bytes(&mut self, n: usize) -> io::Result<&[u8]> {
        if n > self.rest.len() {
            return Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                format!("file truncated: needed {n} more bytes, {} left", self.rest.len()),
            ));
        }
        let (head, tail) = self.rest.split_at(n);
        self.rest = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> io::Result<[u8; N]> {
        let mut buf = [0; N];
        self.bytes(N)?.read_exact(&mut buf)?;
        Ok(buf)
    }
}

/// Parses checkpoint bytes; nothing is returned unless every check passes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { rest: bytes };
    let magic: [u8; 4] = r.array()?;
    if magic != MAGIC {
        return Err(CheckpointError::Format(format!("bad magic {magic:?}, expected \"LDXC\"")));
    }
    let version = u32::from_le_bytes(r.array()?);
    if version != VERSION {
        return Err(CheckpointError::Format(format!(
            "unsupported checkpoint version {version}; this build reads version {VERSION}, \
             upgrade ddx to load newer checkpoints"
        )));
    }
    let meta_len = u64::from_le_bytes(r.array()?);
    let meta_len = usize::try_from(meta_len).map_err(|_| CheckpointError::Format("meta length overflows".into()))?;
    let meta: Meta =
        serde_json::from_slice(r.bytes(meta_len)?).map_err(|e| CheckpointError::Format(format!("meta JSON: {e}")))?;
    meta.config.validate().map_err(|e| CheckpointError::Integrity(e.to_string()))?;
    if meta.history.iter().any(|l| !l.is_finite()) {
        return Err(CheckpointError::Integrity("non-finite loss in history".into()));
    }

    let mut model = ModelState::new(meta.config, 0).map_err(|e| CheckpointError::Integrity(e.to_string()))?;
    let count = u32::from_le_bytes(r.array()?) as usize;
    if count != model.params().len() {
        return Err(CheckpointError::Integrity(format!("expected {} tensors, found {count}", model.params().len())));
    }
    let mut seen = HashSet::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(r.array()?) as usize;
        let name = std::str::from_utf8(r.bytes(name_len)?)
            .map_err(|_| CheckpointError::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let id = model
            .params()
            .find(&name)
            .ok_or_else(|| CheckpointError::Integrity(format!("unexpected tensor {name}")))?;
        if !seen.insert(id) {
            return Err(CheckpointError::Integrity(format!("duplicate tensor {name}")));
        }
        let ndim = r.array::<1>()?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u32::from_le_bytes(r.array()?) as usize);
        }
        let expected = model.params().tensor(id).dims();
        if dims != expected {
            return Err(CheckpointError::Integrity(format!(
                "tensor {name} has shape {dims:?}, configuration requires {expected:?}"
            )));
        }
        let numel: usize = dims.iter().product();
        let payload = r.bytes(numel * 4)?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk"))).collect();
        *model.params_mut().tensor_mut(id) = Tensor::new(dims, data).expect("dims checked");
    }
    if !r.rest.is_empty() {
        return Err(CheckpointError::Format(format!("{} trailing bytes", r.rest.len())));
    }
    Ok(Checkpoint { model, task: meta.task, history: meta.history })
}
