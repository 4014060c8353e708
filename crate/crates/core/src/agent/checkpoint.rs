//! Model checkpoint: `"SMTC"`, format version (`u32`), layer count (`u32`),
//! layer sizes (`u32` each), then every parameter as a little-endian `f64`.
//! Per layer the weights come first as an `n_out × n_in` row-major matrix,
//! followed by the biases. All integers are little-endian.

use std::path::Path;

use super::MlpParams;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SMTC";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(params: &MlpParams) -> Vec<u8> {
    let sizes = params.layer_sizes();
    let mut out = Vec::with_capacity(12 + 4 * sizes.len() + 8 * params.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
    for s in sizes {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    for v in params.flat_params() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Checkpoint("truncated".into()));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<MlpParams> {
    let mut r = Reader { bytes };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let n = r.u32()? as usize;
    if !(2..=64).contains(&n) {
        return Err(Error::Checkpoint(format!("implausible layer count {n}")));
    }
    let sizes = (0..n).map(|_| r.u32().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
    let mut params = MlpParams::zeros(&sizes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let expected = params.param_count() * 8;
    if r.bytes.len() != expected {
        return Err(Error::Checkpoint(format!(
            "expected {expected} parameter bytes, found {}",
            r.bytes.len()
        )));
    }
    let values: Vec<f64> = r
        .bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    params.set_flat_params(&values)?;
    Ok(params)
}

pub fn save(params: &MlpParams, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(params))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<MlpParams> {
    decode(&std::fs::read(path)?)
}
