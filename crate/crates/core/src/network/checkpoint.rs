//! Versioned binary container of named tensors with a JSON header.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic      8 bytes   "VMATCKPT"
//! version    u32       1
//! header_len u32
//! header     header_len bytes of UTF-8 JSON
//! count      u32
//! count × {
//!   name_len u32, name (UTF-8)
//!   dtype    u8        0 = f32, 1 = f64
//!   rank     u32, rank × u64 extents
//!   len      u64       payload bytes = numel × dtype size
//!   payload  len bytes, row-major little-endian
//! }
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::Model;
use crate::error::{Error, Result};
use crate::tensor::{DType, Element, Tensor};

pub const MAGIC: &[u8; 8] = b"VMATCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Stored {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl Stored {
    pub fn dims(&self) -> &[usize] {
        match self {
            Stored::F32(t) => t.dims(),
            Stored::F64(t) => t.dims(),
        }
    }

    pub fn to_f32(&self) -> Tensor<f32> {
        match self {
            Stored::F32(t) => t.clone(),
            Stored::F64(t) => t.cast(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    /// Opaque optimiser/schedule state written by the trainer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainer: Option<serde_json::Value>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<(String, Stored)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Stored> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match t {
                Stored::F32(t) => put_tensor(&mut out, t),
                Stored::F64(t) => put_tensor(&mut out, t),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}, expected {VERSION}")));
        }
        let hlen = r.u32()? as usize;
        let header: CheckpointHeader =
            serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::Format(format!("header: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|e| Error::Format(e.to_string()))?;
            let tag = r.take(1)?[0];
            let dtype = DType::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown dtype tag {tag}")))?;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = r.u64()? as usize;
            let numel: usize = dims.iter().product();
            if len != numel * dtype.size() {
                return Err(Error::Format(format!("tensor `{name}`: payload {len} bytes for extents {dims:?}")));
            }
            let payload = r.take(len)?;
            let t = match dtype {
                DType::F32 => Stored::F32(get_tensor(dims, payload)?),
                DType::F64 => Stored::F64(get_tensor(dims, payload)?),
            };
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_tensor<E: Element>(out: &mut Vec<u8>, t: &Tensor<E>) {
    out.push(E::DTYPE.tag());
    out.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&((t.numel() * E::DTYPE.size()) as u64).to_le_bytes());
    for v in t.data() {
        v.write_le(out);
    }
}

fn get_tensor<E: Element>(dims: Vec<usize>, payload: &[u8]) -> Result<Tensor<E>> {
    let data = payload.chunks_exact(E::DTYPE.size()).map(E::read_le).collect();
    Tensor::from_vec(dims, data).map_err(|e| Error::Format(e.to_string()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated checkpoint: needed {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Model<f32> {
    /// Parameters followed by normalisation buffers.
    pub fn named_tensors(&self) -> Vec<(String, Stored)> {
        let p = self.params();
        p.names()
            .iter()
            .zip(p.values())
            .chain(p.buffer_names().iter().zip(p.buffers()))
            .map(|(n, t)| (n.clone(), Stored::F32(t.clone())))
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                config: self.config().clone(),
                trainer: None,
            },
            tensors: self.named_tensors(),
        }
    }

    /// Copies every parameter and buffer from `ckpt`; the configs must match exactly.
    pub fn load_state(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if &ckpt.header.config != self.config() {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint holds {:?}, model is {:?}",
                ckpt.header.config,
                self.config()
            )));
        }
        let lookup = |name: &str, want: &[usize]| -> Result<Tensor<f32>> {
            let t = ckpt
                .get(name)
                .ok_or_else(|| Error::ConfigMismatch(format!("checkpoint lacks `{name}`")))?;
            if t.dims() != want {
                return Err(Error::ConfigMismatch(format!("`{name}` has extents {:?}, expected {want:?}", t.dims())));
            }
            Ok(t.to_f32())
        };
        let params = self.params_mut();
        for i in 0..params.len() {
            let t = lookup(&params.names[i], params.values[i].dims())?;
            params.set(i, t)?;
        }
        for i in 0..params.buffers.len() {
            let t = lookup(&params.buffer_names[i], params.buffers[i].dims())?;
            params.set_buffer(i, t)?;
        }
        Ok(())
    }

    /// Rebuilds a model from the config stored in `ckpt`.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Model<f32>> {
        let mut m = super::model::build_model(&ckpt.header.config, 0)?;
        m.load_state(ckpt)?;
        Ok(m)
    }
}
