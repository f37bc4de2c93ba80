//! Flat little-endian file layout for learned hash functions:
//!
//! ```text
//! magic  b"EHFS"
//! u32    version
//! u32    m, b, D_p
//! f32    sigma
//! f32    support  (m × D_p, row-major)
//! f32    mu       (m)
//! f32    A        (m × b, row-major)
//! ```

use std::fs;
use std::path::Path;

use super::HashFunctionSet;
use crate::error::{Error, Result};
use crate::numerics::RealMatrix;

pub const HASH_FILE_MAGIC: [u8; 4] = *b"EHFS";
pub const HASH_FILE_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 * 4 + 4;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, len: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated: need {len} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let len = count
            .checked_mul(4)
            .ok_or_else(|| Error::Format(format!("block of {count} values is too large")))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

impl HashFunctionSet {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let a = self
            .weights()
            .ok_or_else(|| Error::State("cannot serialize hash functions without weights".into()))?;
        let (m, b, d) = (self.m(), a.cols(), self.dim());
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * (m * d + m + m * b));
        out.extend_from_slice(&HASH_FILE_MAGIC);
        for v in [HASH_FILE_VERSION, m as u32, b as u32, d as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.sigma().to_le_bytes());
        for block in [self.support_samples().data(), self.mu(), a.data()] {
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != HASH_FILE_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let version = r.u32()?;
        if version != HASH_FILE_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let (m, b, d) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        if m == 0 || b == 0 || d == 0 {
            return Err(Error::Format(format!("empty dimensions m={m} b={b} D_p={d}")));
        }
        let sigma = f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        let support = r.f32s(m * d)?;
        let mu = r.f32s(m)?;
        let a = r.f32s(m * b)?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let invalid = |e: Error| Error::Format(e.to_string());
        let support = RealMatrix::new(m, d, support).map_err(invalid)?;
        let a = RealMatrix::new(m, b, a).map_err(invalid)?;
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite offset".into()));
        }
        HashFunctionSet::from_parts(support, mu, Some(a), sigma).map_err(invalid)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::{fit_embedding, SigmaMode};
    use crate::numerics::SeededRng;

    fn sample() -> HashFunctionSet {
        let mut rng = SeededRng::new(81);
        let q = RealMatrix::random_normal(20, 6, 0.0, 1.0, &mut rng);
        fit_embedding(&q, 5, SigmaMode::Median, &mut rng)
            .unwrap()
            .with_random_weights(7, &mut rng)
            .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let hfs = sample();
        let bytes = hfs.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"EHFS");
        assert_eq!(bytes.len(), HEADER_LEN + 4 * (5 * 6 + 5 + 5 * 7));
        let back = HashFunctionSet::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back, hfs);
    }

    #[test]
    fn file_round_trip() {
        let hfs = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.bin");
        hfs.save(&path).unwrap();
        assert_eq!(HashFunctionSet::load(&path).unwrap(), hfs);
        assert!(matches!(
            HashFunctionSet::load(&dir.path().join("missing.bin")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn malformed_inputs() {
        let bytes = sample().to_bytes().unwrap();
        assert!(matches!(
            HashFunctionSet::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(HashFunctionSet::from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(HashFunctionSet::from_bytes(&bad), Err(Error::Format(_))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(HashFunctionSet::from_bytes(&long), Err(Error::Format(_))));
    }

    #[test]
    fn unlearned_set_cannot_be_written() {
        let mut rng = SeededRng::new(82);
        let q = RealMatrix::random_normal(4, 2, 0.0, 1.0, &mut rng);
        let hfs = fit_embedding(&q, 2, SigmaMode::Median, &mut rng).unwrap();
        assert!(matches!(hfs.to_bytes(), Err(Error::State(_))));
    }
}
