//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `VRGW`, version `u32`, parameter count `u32`,
//! then per parameter: name length `u16`, UTF-8 name, rank `u8`, one `u32`
//! per dimension, and the `f64` payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{NumericsError, ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VRGW";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ParamStore) -> Result<Vec<u8>, NumericsError> {
    let mut out = Vec::with_capacity(16 + params.scalar_count() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, name, tensor) in params.iter() {
        let name_len = u16::try_from(name.len())
            .map_err(|_| NumericsError::Checkpoint(format!("parameter name too long: {name}")))?;
        let rank = u8::try_from(tensor.rank())
            .map_err(|_| NumericsError::Checkpoint(format!("rank too large for {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], NumericsError> {
        if self.pos + n > self.bytes.len() {
            return Err(NumericsError::Checkpoint(format!(
                "truncated while reading {what}: need {} bytes, have {}",
                self.pos + n,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, NumericsError> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore, NumericsError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(NumericsError::Checkpoint("bad magic, expected VRGW".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(NumericsError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let count = r.u32("parameter count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len =
            u16::from_le_bytes(r.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| NumericsError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = r.take(n * 8, &name)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        store.register(name, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(NumericsError::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(store)
}

pub fn save_checkpoint(params: &ParamStore, path: &Path) -> Result<(), NumericsError> {
    let bytes = encode_checkpoint(params)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore, NumericsError> {
    decode_checkpoint(&fs::read(path)?)
}
