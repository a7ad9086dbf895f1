//! Binary network checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "APACNET1"                      8-byte magic
//! u32 C, u32 H, u32 W             input shape
//! u32 n_layers, then per layer:   u8 kind, u32 a, u32 b
//!     kind 0 conv (a = kernel, b = maps), 1 pool (a = grid),
//!     2 fc (a = units), 3 relu, 4 softmax
//! u64 seed
//! u32 len, bytes                  config digest (UTF-8)
//! u32 n_tensors, then per tensor: u32 ndim, u32 dims[ndim], f32 data[]
//! ```

use sha2::{Digest, Sha256};

use super::{LayerSpec, Network};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"APACNET1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub seed: u64,
    pub config_digest: String,
}

pub fn encode(net: &Network, seed: u64, config_digest: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + net.parameter_count() * 4);
    out.extend_from_slice(MAGIC);
    for d in net.input_shape() {
        put_u32(&mut out, d);
    }
    put_u32(&mut out, net.layers().len());
    for layer in net.layers() {
        let (kind, a, b) = match *layer {
            LayerSpec::ConvValid { kernel, out_maps } => (0u8, kernel, out_maps),
            LayerSpec::MaxPool { grid } => (1, grid, 0),
            LayerSpec::FullyConnected { out_units } => (2, out_units, 0),
            LayerSpec::Relu => (3, 0, 0),
            LayerSpec::Softmax => (4, 0, 0),
        };
        out.push(kind);
        put_u32(&mut out, a);
        put_u32(&mut out, b);
    }
    out.extend_from_slice(&seed.to_le_bytes());
    put_u32(&mut out, config_digest.len());
    out.extend_from_slice(config_digest.as_bytes());
    put_u32(&mut out, net.params().len());
    for t in net.params() {
        put_u32(&mut out, t.shape().len());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic (expected APACNET1)".into()));
    }
    let input_shape = [r.u32()?, r.u32()?, r.u32()?];
    let n_layers = r.u32()?;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let kind = r.take(1)?[0];
        let (a, b) = (r.u32()?, r.u32()?);
        layers.push(match kind {
            0 => LayerSpec::ConvValid { kernel: a, out_maps: b },
            1 => LayerSpec::MaxPool { grid: a },
            2 => LayerSpec::FullyConnected { out_units: a },
            3 => LayerSpec::Relu,
            4 => LayerSpec::Softmax,
            k => return Err(Error::Checkpoint(format!("unknown layer kind {k}"))),
        });
    }
    let seed = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let dlen = r.u32()?;
    let config_digest = String::from_utf8(r.take(dlen)?.to_vec())
        .map_err(|_| Error::Checkpoint("config digest is not UTF-8".into()))?;
    let n_tensors = r.u32()?;
    let mut params = Vec::with_capacity(n_tensors.min(1024));
    for _ in 0..n_tensors {
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let network = Network::from_parts(input_shape, layers, params)?;
    Ok(Checkpoint {
        network,
        seed,
        config_digest,
    })
}

/// Hex SHA-256 of a byte string.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn save(path: &std::path::Path, net: &Network, seed: u64, config_digest: &str) -> Result<String> {
    let bytes = encode(net, seed, config_digest);
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(digest_hex(&bytes))
}

pub fn load(path: &std::path::Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("extent fits in u32").to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}
