//! Versioned parameter container shared by every trained artifact.
//!
//! Layout: `b"VQGCKPT\0"`, u32 version, u32 metadata length, metadata JSON,
//! u32 block count, then per block a u16-prefixed UTF-8 name, u32 rank, u64
//! dims and little-endian `f64` values. A trailing CRC-32 covers everything
//! before it, so truncation and bit rot are detected on load.

use std::path::Path;

use serde_json::Value;
use vqcpc_gan_autodiff::nn::VarStore;
use vqcpc_gan_autodiff::optim::{Adam, AdamState};

use crate::error::{Error, Result};
use crate::fsutil;

const MAGIC: &[u8; 8] = b"VQGCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: Value,
    pub blocks: Vec<Block>,
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "unexpected end of checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn new(metadata: Value) -> Self {
        Checkpoint {
            metadata,
            blocks: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.blocks.push(Block {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        });
    }

    pub fn get(&self, name: &str) -> Result<&Block> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Missing(format!("checkpoint block {name}")))
    }

    /// Stores every variable of `vs` under `prefix.`.
    pub fn push_vars(&mut self, prefix: &str, vs: &VarStore) {
        for v in vs.vars() {
            self.push(format!("{prefix}.{}", v.name()), v.shape(), v.to_vec());
        }
    }

    /// Overwrites every variable of `vs` from blocks under `prefix.`.
    pub fn restore_vars(&self, prefix: &str, vs: &VarStore) -> Result<()> {
        for v in vs.vars() {
            let block = self.get(&format!("{prefix}.{}", v.name()))?;
            if block.shape != v.shape() {
                return Err(Error::Geometry(format!(
                    "checkpoint block {} has shape {:?}, model expects {:?}",
                    block.name,
                    block.shape,
                    v.shape()
                )));
            }
            v.set(block.data.clone());
        }
        Ok(())
    }

    pub fn push_adam(&mut self, prefix: &str, opt: &Adam) {
        let st = opt.state();
        self.push(format!("{prefix}.step"), &[1], vec![st.step as f64]);
        for (i, (m, v)) in st.m.iter().zip(&st.v).enumerate() {
            self.push(format!("{prefix}.m.{i}"), &[m.len()], m.clone());
            self.push(format!("{prefix}.v.{i}"), &[v.len()], v.clone());
        }
    }

    pub fn restore_adam(&self, prefix: &str, opt: &mut Adam) -> Result<()> {
        let step = self.get(&format!("{prefix}.step"))?.data[0] as u64;
        let n = opt.vars().len();
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for (i, var) in opt.vars().iter().enumerate() {
            let size: usize = var.shape().iter().product();
            let mi = self.get(&format!("{prefix}.m.{i}"))?;
            let vi = self.get(&format!("{prefix}.v.{i}"))?;
            if mi.data.len() != size || vi.data.len() != size {
                return Err(Error::Geometry(format!("optimizer state {prefix}.{i} does not match {}", var.name())));
            }
            m.push(mi.data.clone());
            v.push(vi.data.clone());
        }
        opt.set_state(AdamState { step, m, v });
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.metadata).expect("JSON values always serialize");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for b in &self.blocks {
            out.extend_from_slice(&(b.name.len() as u16).to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.extend_from_slice(&(b.shape.len() as u32).to_le_bytes());
            for &d in &b.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in &b.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(path: &Path, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::format(path, "not a checkpoint"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(Error::Checksum(path.to_path_buf()));
        }
        let mut r = Reader { path, bytes: body, pos: 8 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let meta_len = r.u32()? as usize;
        let metadata = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::format(path, format!("bad metadata: {e}")))?;
        let n_blocks = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::format(path, "block name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            blocks.push(Block { name, shape, data });
        }
        if r.pos != body.len() {
            return Err(Error::format(path, "trailing bytes after last block"));
        }
        Ok(Checkpoint { metadata, blocks })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(path, &fsutil::read(path)?)
    }
}
