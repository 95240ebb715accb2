//! Single-file checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes   b"GSNETCKP"
//! version   u32
//! spec_len  u64       length of the JSON block
//! spec      spec_len bytes of UTF-8 JSON (the NetworkSpec)
//! count     u64       number of parameters
//! params    count x f64, declaration order (block, group, weights, bias)
//! checksum  8 bytes   first 8 bytes of SHA-256 over everything above
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Network, NetworkSpec, ParamSet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GSNETCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

fn checksum(bytes: &[u8]) -> [u8; 8] {
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    out
}

pub fn write_checkpoint(net: &Network) -> Result<Vec<u8>> {
    let spec = serde_json::to_vec(net.spec())?;
    let params = net.params().to_flat();
    let mut buf = Vec::with_capacity(36 + spec.len() + 8 * params.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(spec.len() as u64).to_le_bytes());
    buf.extend_from_slice(&spec);
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in &params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let sum = checksum(&buf);
    buf.extend_from_slice(&sum);
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated checkpoint while reading {what}"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Network> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad checkpoint magic".into(),
        });
    }
    let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: 8,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let spec_len = cur.u64("spec length")? as usize;
    let spec_offset = cur.pos as u64;
    let spec: NetworkSpec = serde_json::from_slice(cur.take(spec_len, "spec")?).map_err(|e| Error::Format {
        offset: spec_offset,
        message: format!("invalid spec JSON: {e}"),
    })?;
    let count = cur.u64("parameter count")? as usize;
    let raw = cur.take(count.saturating_mul(8), "parameters")?;
    let body_end = cur.pos;
    let stored = cur.take(8, "checksum")?;
    if stored != checksum(&bytes[..body_end]) {
        return Err(Error::Format {
            offset: body_end as u64,
            message: "checksum mismatch".into(),
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format {
            offset: cur.pos as u64,
            message: "trailing bytes after checksum".into(),
        });
    }

    let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let layout = spec.layout()?;
    let mut params = ParamSet::zeros(&layout);
    params.set_flat(&values).map_err(|_| Error::Format {
        offset: spec_offset + spec_len as u64,
        message: format!("spec needs {} parameters, file has {count}", params.len()),
    })?;
    Network::new(spec, params)
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_checkpoint(net)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    read_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LayerSpec, LossKind};

    fn net() -> Network {
        let spec = NetworkSpec {
            input_shape: vec![1, 5, 5],
            layers: vec![
                LayerSpec::DecomposedPair { shared: 2, neurons: 3, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::MaxPool { size: 2, stride: 2 },
                LayerSpec::Classifier { classes: 4 },
            ],
            loss: LossKind::CrossEntropy,
        };
        Network::init(spec, 17).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = net();
        let bytes = write_checkpoint(&a).unwrap();
        let b = read_checkpoint(&bytes).unwrap();
        assert_eq!(a.spec(), b.spec());
        let (fa, fb) = (a.params().to_flat(), b.params().to_flat());
        assert!(fa.iter().zip(&fb).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(write_checkpoint(&b).unwrap(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = write_checkpoint(&net()).unwrap();
        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 20] ^= 1;
        assert!(matches!(read_checkpoint(&flipped), Err(Error::Format { .. })));
        assert!(matches!(read_checkpoint(&bytes[..n - 3]), Err(Error::Format { .. })));
        let mut bad_magic = bytes;
        bad_magic[0] = b'X';
        assert!(matches!(read_checkpoint(&bad_magic), Err(Error::Format { offset: 0, .. })));
    }
}
