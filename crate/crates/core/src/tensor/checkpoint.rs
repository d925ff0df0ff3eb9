//! Binary checkpoint format.
//!
//! ```text
//! b"SBVQ" magic
//! u32 version
//! u32 parameter count
//! per parameter:
//!   u16 name length, UTF-8 name
//!   u8 rank, rank × u32 dims
//!   product(dims) × f32 payload
//! ```
//! Everything little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::{ParamSet, Result, Tensor, TensorError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SBVQ";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One stored parameter, as found on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl CheckpointEntry {
    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&x| f64::from(x)).collect())
    }
}

pub fn encode_checkpoint(params: &ParamSet) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        let name = p.name.as_bytes();
        let name_len =
            u16::try_from(name.len()).map_err(|_| TensorError::Checkpoint(format!("name too long: {}", p.name)))?;
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(name);
        let rank = u8::try_from(p.value.rank())
            .map_err(|_| TensorError::Checkpoint(format!("rank too large for {}", p.name)))?;
        buf.push(rank);
        for &d in p.value.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in p.value.data() {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn write_checkpoint(params: &ParamSet, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(params)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(TensorError::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<CheckpointEntry>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4).map_err(|_| TensorError::Checkpoint("bad magic".into()))? != CHECKPOINT_MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = c.u32()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| TensorError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = c.u8()? as usize;
        let shape = (0..rank)
            .map(|_| c.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push(CheckpointEntry { name, shape, data });
    }
    if c.pos != bytes.len() {
        return Err(TensorError::Checkpoint("trailing bytes after last parameter".into()));
    }
    Ok(out)
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<CheckpointEntry>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

impl ParamSet {
    /// Overwrites every parameter from checkpoint entries; names and shapes
    /// must match exactly.
    pub fn load_entries(&mut self, entries: &[CheckpointEntry]) -> Result<()> {
        if entries.len() != self.len() {
            return Err(TensorError::Checkpoint(format!(
                "checkpoint holds {} parameters, model expects {}",
                entries.len(),
                self.len()
            )));
        }
        for e in entries {
            self.set_value(&e.name, e.to_tensor()?)?;
        }
        Ok(())
    }

    /// Builds a set directly from checkpoint entries.
    pub fn from_entries(entries: &[CheckpointEntry]) -> Result<Self> {
        let mut ps = ParamSet::new();
        for e in entries {
            ps.insert(e.name.clone(), e.to_tensor()?)?;
        }
        Ok(ps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert(
            "conv1.weight",
            Tensor::new(vec![2, 1, 3], vec![0.1, -0.2, 0.3, 0.25, 1e-3, -7.5]).unwrap(),
        )
        .unwrap();
        ps.insert("b", Tensor::from_vec(vec![0.5])).unwrap();
        ps
    }

    #[test]
    fn layout_is_exact() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"SBVQ");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        let first = 2 + 12 + 1 + 3 * 4 + 6 * 4;
        let second = 2 + 1 + 1 + 4 + 4;
        assert_eq!(bytes.len(), 12 + first + second);
    }

    #[test]
    fn reencode_is_byte_exact() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        let entries = decode_checkpoint(&bytes).unwrap();
        let again = encode_checkpoint(&ParamSet::from_entries(&entries).unwrap()).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn wrong_magic_and_truncation() {
        let mut bytes = encode_checkpoint(&sample()).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode_checkpoint(&bytes).is_err());
    }

    #[test]
    fn load_entries_checks_names() {
        let entries = decode_checkpoint(&encode_checkpoint(&sample()).unwrap()).unwrap();
        let mut other = ParamSet::new();
        other.insert("x", Tensor::zeros(&[2, 1, 3])).unwrap();
        other.insert("b", Tensor::zeros(&[1])).unwrap();
        assert!(other.load_entries(&entries).is_err());
        let mut same = sample();
        same.load_entries(&entries).unwrap();
    }
}
