//! CWT1 weight files, little-endian: magic "CWT1", u32 tensor count, then
//! per tensor u8 rank + u32 dims + f32 payload, closed by a u64 FNV-1a
//! checksum of all payload bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::nn::network::Network;
use crate::nn::tensor::Tensor;

pub const WEIGHT_MAGIC: &[u8; 4] = b"CWT1";

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x00000100000001b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Flat list of tensors as stored on disk. Model wrappers decide what the
/// tensors mean (metadata first, then parameters in network order).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub tensors: Vec<Tensor>,
}

impl WeightFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHT_MAGIC);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut payload = Vec::new();
        for t in &self.tensors {
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
            out.extend_from_slice(&payload[payload.len() - 4 * t.len()..]);
        }
        out.extend_from_slice(&fnv1a(&payload).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated);
        }
        if &bytes[0..4] != WEIGHT_MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < 8 {
            return Err(Error::Truncated);
        }
        let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let mut off = 8usize;
        let mut tensors = Vec::with_capacity(count);
        let mut payload = Vec::new();
        for _ in 0..count {
            if bytes.len() < off + 1 {
                return Err(Error::Truncated);
            }
            let rank = bytes[off] as usize;
            off += 1;
            if bytes.len() < off + 4 * rank {
                return Err(Error::Truncated);
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize);
                off += 4;
            }
            let n: usize = shape.iter().product();
            if bytes.len() < off + 4 * n {
                return Err(Error::Truncated);
            }
            let raw = &bytes[off..off + 4 * n];
            payload.extend_from_slice(raw);
            let data = raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect();
            off += 4 * n;
            tensors.push(Tensor::new(shape, data)?);
        }
        if bytes.len() < off + 8 {
            return Err(Error::Truncated);
        }
        let stored = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        if stored != fnv1a(&payload) {
            return Err(Error::ChecksumMismatch);
        }
        Ok(Self { tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Save network parameters with leading metadata tensors.
pub fn save_weights(net: &Network, metadata: &[Tensor], path: &Path) -> Result<()> {
    let tensors = metadata.iter().cloned().chain(net.params().into_iter().cloned()).collect();
    WeightFile { tensors }.write(path)
}

/// Load parameters into a network with the expected architecture; the first
/// `n_meta` tensors are returned as metadata.
pub fn load_weights(net: &mut Network, n_meta: usize, path: &Path) -> Result<Vec<Tensor>> {
    let file = WeightFile::read(path)?;
    apply_weights(net, n_meta, file)
}

pub fn apply_weights(net: &mut Network, n_meta: usize, file: WeightFile) -> Result<Vec<Tensor>> {
    let params = net.params_mut();
    if file.tensors.len() != n_meta + params.len() {
        return Err(Error::WeightShapeMismatch);
    }
    let (meta, rest) = file.tensors.split_at(n_meta);
    for (p, t) in params.into_iter().zip(rest) {
        if p.shape() != t.shape() {
            return Err(Error::WeightShapeMismatch);
        }
        *p = t.clone();
    }
    Ok(meta.to_vec())
}
