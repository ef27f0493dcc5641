//! Binary checkpoints: `CGTCKPT\0`, a u32 format version, a length-prefixed
//! JSON header, a u32 tensor count, then per tensor
//! `u32 name_len, name, u32 rank, u64 dims…, f32 data`, all little-endian.

use std::io::{Read, Write};
use std::path::Path;

use cgt_tensor::{Float, ParamStore, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CgtError, Result};
use crate::model::Cgt;

pub const MAGIC: &[u8; 8] = b"CGTCKPT\0";
pub const VERSION: u32 = 1;

/// Where a specialized model came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the source checkpoint's tensor section.
    pub source: String,
    /// SHA-256 of the prefix tokens.
    pub prefix: String,
    /// 1-based position whose context was captured.
    pub split: usize,
    pub folded: bool,
    pub y: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: String,
    specialized: bool,
    provenance: Option<Provenance>,
    step: usize,
    build: String,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub specialized: bool,
    pub provenance: Option<Provenance>,
    pub step: usize,
    pub params: ParamStore<f32>,
}

/// Build identifier recorded in headers and run directories.
pub fn build_id() -> String {
    format!("{}-{}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

fn ckpt_err(msg: impl Into<String>) -> CgtError {
    CgtError::Checkpoint(msg.into())
}

/// Hex SHA-256 of the serialized tensor section of `params`.
pub fn params_hash(params: &ParamStore<f32>) -> String {
    let mut buf = Vec::new();
    write_tensors(&mut buf, params);
    hex::encode(Sha256::digest(&buf))
}

/// Hex SHA-256 of a token prefix.
pub fn tokens_hash(tokens: &[usize]) -> String {
    let mut h = Sha256::new();
    for &t in tokens {
        h.update((t as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn write_tensors(out: &mut Vec<u8>, params: &ParamStore<f32>) {
    out.extend((params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.extend((t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend((d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() < n {
            return Err(ckpt_err("truncated file"));
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn from_model<T: Float>(model: &Cgt<T>, config: &RunConfig, step: usize) -> Checkpoint {
        let mut config = config.clone();
        config.model = model.cfg.clone();
        Checkpoint { config, specialized: model.is_specialized(), provenance: None, step, params: model.params.cast() }
    }

    pub fn model<T: Float>(&self) -> Cgt<T> {
        Cgt { cfg: self.config.model.clone(), params: self.params.cast() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.to_text(),
            specialized: self.specialized,
            provenance: self.provenance.clone(),
            step: self.step,
            build: build_id(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 4 * self.params.num_scalars());
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend((json.len() as u32).to_le_bytes());
        out.extend(json);
        write_tensors(&mut out, &self.params);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { buf: bytes };
        if r.take(8)? != MAGIC {
            return Err(ckpt_err("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ckpt_err(format!("unsupported format version {version}")));
        }
        let hlen = r.u32()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(hlen)?).map_err(|e| ckpt_err(format!("header: {e}")))?;
        let config = RunConfig::from_text(&header.config)?;
        let count = r.u32()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?).map_err(|_| ckpt_err("tensor name is not UTF-8"))?.to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = r.take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            params.insert(name, Tensor::new(shape, data)?);
        }
        if !r.buf.is_empty() {
            return Err(ckpt_err("trailing bytes"));
        }
        Ok(Checkpoint { config, specialized: header.specialized, provenance: header.provenance, step: header.step, params })
    }

    /// Write via a temporary file and rename so an interrupted save never
    /// clobbers the previous checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| CgtError::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| CgtError::io(&tmp, e))?;
        f.sync_all().map_err(|e| CgtError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| CgtError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| CgtError::io(path, e))?;
        Self::from_bytes(&buf)
    }

    pub fn hash(&self) -> String {
        params_hash(&self.params)
    }
}
