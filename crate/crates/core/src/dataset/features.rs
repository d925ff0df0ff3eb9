//! Image feature store: `b"VQAF"`, version u32, count u32, dim u32, then
//! `count` records of (image_id u64, dim × f32), little-endian, sorted by id.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{io_err, DatasetError, Result};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"VQAF";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_HEADER_LEN: u64 = 16;

/// Writes all vectors; every one must have the same length.
pub fn write_features(path: &Path, features: &BTreeMap<u64, Vec<f32>>) -> Result<()> {
    let dim = features.values().next().map_or(0, Vec::len);
    for (&image_id, v) in features {
        if v.len() != dim {
            return Err(DatasetError::FeatureDim {
                image_id,
                expected: dim,
                got: v.len(),
            });
        }
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(io_err(path));
    write(FEATURE_MAGIC)?;
    write(&FEATURE_VERSION.to_le_bytes())?;
    write(&(features.len() as u32).to_le_bytes())?;
    write(&(dim as u32).to_le_bytes())?;
    for (&id, v) in features {
        write(&id.to_le_bytes())?;
        for x in v {
            write(&x.to_le_bytes())?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Random-access reader. Only ids and offsets are held in memory.
#[derive(Debug)]
pub struct FeatureStore {
    path: PathBuf,
    dim: usize,
    offsets: BTreeMap<u64, u64>,
    file: Mutex<File>,
}

impl FeatureStore {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = File::open(path).map_err(io_err(path))?;
        let file_len = file.metadata().map_err(io_err(path))?.len();
        let mut header = [0u8; FEATURE_HEADER_LEN as usize];
        file.read_exact(&mut header)
            .map_err(|_| DatasetError::MalformedStore("file shorter than header".into()))?;
        if &header[..4] != FEATURE_MAGIC {
            return Err(DatasetError::MalformedStore("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != FEATURE_VERSION {
            return Err(DatasetError::MalformedStore(format!("unsupported version {version}")));
        }
        let (count, dim) = (word(8) as u64, word(12) as usize);
        let stride = 8 + dim as u64 * 4;
        if FEATURE_HEADER_LEN + count * stride != file_len {
            return Err(DatasetError::MalformedStore(format!(
                "{count} records of dim {dim} need {} bytes, file has {file_len}",
                FEATURE_HEADER_LEN + count * stride
            )));
        }
        let mut offsets = BTreeMap::new();
        let mut id = [0u8; 8];
        for i in 0..count {
            let off = FEATURE_HEADER_LEN + i * stride;
            file.seek(SeekFrom::Start(off)).map_err(io_err(path))?;
            file.read_exact(&mut id).map_err(io_err(path))?;
            let image_id = u64::from_le_bytes(id);
            if offsets.insert(image_id, off + 8).is_some() {
                return Err(DatasetError::MalformedStore(format!("duplicate image_id {image_id}")));
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            dim,
            offsets,
            file: Mutex::new(file),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn contains(&self, image_id: u64) -> bool {
        self.offsets.contains_key(&image_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.offsets.keys().copied()
    }

    pub fn get(&self, image_id: u64) -> Result<Vec<f32>> {
        let off = *self
            .offsets
            .get(&image_id)
            .ok_or(DatasetError::UnknownImage(image_id))?;
        let mut buf = vec![0u8; self.dim * 4];
        {
            let mut f = self.file.lock().expect("feature store lock");
            f.seek(SeekFrom::Start(off)).map_err(io_err(&self.path))?;
            f.read_exact(&mut buf).map_err(io_err(&self.path))?;
        }
        Ok(decode_f32s(&buf))
    }

    pub fn get_tensor(&self, image_id: u64) -> Result<Tensor> {
        Ok(Tensor::from_vec(
            self.get(image_id)?.into_iter().map(f64::from).collect(),
        ))
    }

    /// Reads every record in file order.
    pub fn load_all(path: &Path) -> Result<BTreeMap<u64, Vec<f32>>> {
        let store = Self::open(path)?;
        let file = File::open(path).map_err(io_err(path))?;
        let mut r = BufReader::new(file);
        r.seek(SeekFrom::Start(FEATURE_HEADER_LEN)).map_err(io_err(path))?;
        let mut out = BTreeMap::new();
        let mut id = [0u8; 8];
        let mut buf = vec![0u8; store.dim * 4];
        for _ in 0..store.len() {
            r.read_exact(&mut id).map_err(io_err(path))?;
            r.read_exact(&mut buf).map_err(io_err(path))?;
            out.insert(u64::from_le_bytes(id), decode_f32s(&buf));
        }
        Ok(out)
    }
}

fn decode_f32s(buf: &[u8]) -> Vec<f32> {
    buf.chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, dim: usize) -> BTreeMap<u64, Vec<f32>> {
        (0..n as u64)
            .map(|i| {
                (
                    i * 7 + 3,
                    (0..dim).map(|j| (i as f32 + 1.0) * (j as f32 - 0.5) / 3.0).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn round_trip_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.vqaf");
        let data = sample(3, 4096);
        write_features(&p, &data).unwrap();
        let size = std::fs::metadata(&p).unwrap().len();
        assert_eq!(size, 16 + 3 * (8 + 4096 * 4));
        let store = FeatureStore::open(&p).unwrap();
        for (id, v) in &data {
            let got = store.get(*id).unwrap();
            assert_eq!(
                got.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                v.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
        assert_eq!(FeatureStore::load_all(&p).unwrap(), data);
        assert!(matches!(store.get(1), Err(DatasetError::UnknownImage(1))));
    }

    #[test]
    fn dim_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut data = sample(2, 4);
        data.insert(99, vec![0.0; 3]);
        assert!(matches!(
            write_features(&dir.path().join("f"), &data),
            Err(DatasetError::FeatureDim {
                image_id: 99,
                expected: 4,
                got: 3
            })
        ));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f");
        write_features(&p, &sample(2, 4)).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.pop();
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(FeatureStore::open(&p), Err(DatasetError::MalformedStore(_))));
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(FeatureStore::open(&p), Err(DatasetError::MalformedStore(_))));
    }
}
