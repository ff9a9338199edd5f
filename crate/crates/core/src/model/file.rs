//! Binary model file.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "CSRB"                       magic, 4 bytes
//! u32                          format version
//! u32 n, then n × u32          layer widths [d, n_1, ..., m]
//! f64 epsilon, f64 alpha       training metadata
//! u64 seed
//! u64                          parameter count
//! u32                          CRC-32 of every preceding byte and the payload
//! count × f64                  W_0 row-major, b_0, W_1, b_1, ...
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Network;
use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"CSRB";
pub const FORMAT_VERSION: u32 = 1;

/// Training metadata stored alongside the parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub epsilon: f64,
    pub alpha: f64,
    pub seed: u64,
}

pub fn encode<S: Scalar>(net: &Network<S>, meta: &ModelMeta) -> Vec<u8> {
    let arch = net.arch();
    let mut header = Vec::with_capacity(64);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    header.extend_from_slice(&(arch.len() as u32).to_le_bytes());
    for &w in &arch {
        header.extend_from_slice(&(w as u32).to_le_bytes());
    }
    header.extend_from_slice(&meta.epsilon.to_le_bytes());
    header.extend_from_slice(&meta.alpha.to_le_bytes());
    header.extend_from_slice(&meta.seed.to_le_bytes());
    header.extend_from_slice(&(net.param_count() as u64).to_le_bytes());

    let mut payload = Vec::with_capacity(net.param_count() * 8);
    for p in net.params() {
        for &v in p.data() {
            payload.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&header);
    hasher.update(&payload);
    header.extend_from_slice(&hasher.finalize().to_le_bytes());
    header.extend_from_slice(&payload);
    header
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::malformed(self.path, "unexpected end of file"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parses a model file image. `path` is only used in error messages.
pub fn decode<S: Scalar>(bytes: &[u8], path: &Path) -> Result<(Network<S>, ModelMeta)> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(Error::malformed(path, "bad magic"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let n = r.u32()? as usize;
    if !(2..=1024).contains(&n) {
        return Err(Error::malformed(path, format!("implausible layer count {n}")));
    }
    let arch = (0..n).map(|_| r.u32().map(|w| w as usize)).collect::<Result<Vec<_>>>()?;
    if arch.contains(&0) {
        return Err(Error::malformed(path, "zero-width layer"));
    }
    let meta = ModelMeta {
        epsilon: r.f64()?,
        alpha: r.f64()?,
        seed: r.u64()?,
    };
    let count = r.u64()? as usize;
    let expected: usize = arch.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    if count != expected {
        return Err(Error::malformed(
            path,
            format!("parameter count {count} does not match architecture ({expected})"),
        ));
    }
    let header_end = r.pos;
    let stored = r.u32()?;
    let payload_len = count
        .checked_mul(8)
        .ok_or_else(|| Error::malformed(path, "parameter count overflows"))?;
    let payload = r.take(payload_len)?;
    if r.pos != bytes.len() {
        return Err(Error::malformed(path, "trailing bytes after parameters"));
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&bytes[..header_end]);
    hasher.update(payload);
    if hasher.finalize() != stored {
        return Err(Error::Checksum { path: path.into() });
    }

    let mut values = payload
        .chunks_exact(8)
        .map(|c| S::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))));
    let mut params = Vec::with_capacity(2 * (n - 1));
    for w in arch.windows(2) {
        params.push(Tensor::matrix(w[1], w[0], values.by_ref().take(w[0] * w[1]).collect())?);
        params.push(Tensor::vector(values.by_ref().take(w[1]).collect()));
    }
    Ok((Network::from_params(&arch, params)?, meta))
}

pub fn save<S: Scalar>(net: &Network<S>, meta: &ModelMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(net, meta)).map_err(|e| Error::io(path, e))
}

pub fn load<S: Scalar>(path: impl AsRef<Path>) -> Result<(Network<S>, ModelMeta)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
