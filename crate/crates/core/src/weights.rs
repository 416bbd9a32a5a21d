//! Versioned binary weights file.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `SBMIWTS\0` |
//! | 4 | format version (u32) |
//! | 8 | config length `n` (u64) |
//! | n | model config as UTF-8 JSON |
//! | 4 | tensor count (u32) |
//!
//! then per tensor: rank (u32), each dim (u64), and the values as f64.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{build_model, ModelConfig, Network};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SBMIWTS\0";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_weights(net: &Network) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(net.config())?;
    let params = net.params();
    let mut out = Vec::with_capacity(32 + config.len() + params.iter().map(|p| 8 * p.len() + 40).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.rank() as u32).to_le_bytes());
        for &d in p.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(self.origin, "truncated weights file")),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::format(self.origin, "length overflows"))
    }
}

/// Parses a weights buffer into its config and tensors.
pub fn decode_weights(bytes: &[u8], origin: &str) -> Result<(ModelConfig, Vec<Tensor>)> {
    let mut r = Reader { bytes, pos: 0, origin };
    if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::format(origin, "bad magic, not a weights file"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::format(origin, format!("unsupported weights version {version}")));
    }
    let n = r.len()?;
    let config: ModelConfig = serde_json::from_slice(r.take(n)?)
        .map_err(|e| Error::format(origin, format!("bad model config: {e}")))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format(origin, "tensor too large"))?;
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::format(origin, "tensor too large"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        tensors.push(Tensor::from_vec(&shape, data).map_err(|e| Error::format(origin, e.to_string()))?);
    }
    if r.pos != bytes.len() {
        return Err(Error::format(origin, "trailing bytes after last tensor"));
    }
    Ok((config, tensors))
}

pub fn save_weights(net: &Network, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode_weights(net)?).map_err(|e| Error::io(path, e))
}

/// Rebuilds the network stored in a weights file.
pub fn load_weights(path: &Path) -> Result<Network> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (config, tensors) = decode_weights(&bytes, &path.display().to_string())?;
    let plan = build_model(&config)?;
    let mut net = Network::init(&plan, &RngStream::new(0, "init", 0))?;
    net.load_params(tensors)?;
    Ok(net)
}
