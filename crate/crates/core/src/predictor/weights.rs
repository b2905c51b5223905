//! `PQW1` weight files.
//!
//! Layout, little-endian: magic `PQW1`, `u32` layer count (the head counts as
//! the last layer), then per layer a `[co, ci, ks, ka, kr]` header of five
//! `u32` followed by `co·ci·ks·ka·kr` weights and `co` biases as `f32`.

use std::path::Path;

use super::cnn::{CnnConfig, Conv, Network};
use crate::error::{Error, Result};
use crate::polar::N_SLICES;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"PQW1";

pub fn encode_weights(net: &Network<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * net.n_params() + 20 * (net.layers().len() + 1));
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&(net.layers().len() as u32 + 1).to_le_bytes());
    for conv in net.layers().iter().chain(std::iter::once(net.head())) {
        for d in conv.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in conv.weights().iter().chain(conv.bias()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("weights truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("layer too large".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

/// Decodes a network for canonical patches; `cfg` supplies dropout and activation.
pub fn decode_weights(bytes: &[u8], cfg: &CnnConfig) -> Result<Network<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != WEIGHTS_MAGIC {
        return Err(Error::Format("bad magic, expected PQW1".into()));
    }
    let n = r.u32()? as usize;
    if n < 2 {
        return Err(Error::Format(format!("need at least one layer and a head, found {n} layers")));
    }
    let mut convs = Vec::with_capacity(n);
    for _ in 0..n {
        let mut shape = [0usize; 5];
        for d in &mut shape {
            *d = r.u32()? as usize;
        }
        let count = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let count = count.ok_or_else(|| Error::Format(format!("layer shape {shape:?} overflows")))?;
        let weights = r.f32s(count)?;
        let bias = r.f32s(shape[0])?;
        convs.push(Conv::new(shape, weights, bias)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after weights", bytes.len() - r.pos)));
    }
    let head = convs.pop().expect("n >= 2");
    Network::from_parts(convs, head, cfg, N_SLICES)
}

pub fn write_weights(net: &Network<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_weights(net)).map_err(|e| Error::io(path, e))
}

pub fn read_weights(path: impl AsRef<Path>, cfg: &CnnConfig) -> Result<Network<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    decode_weights(&bytes, cfg)
}
