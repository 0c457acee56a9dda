//! On-disk cache of interstitial Fourier tables.
//!
//! Layout, all little-endian: 8-byte magic, `u32` version, `u32` dimension,
//! `i64` extent, 32-byte SHA-256 of the key, `u64` entry count, then
//! `(re, im)` pairs of `f64` in table order.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fftcheb::FourierTable;

pub const MAGIC: &[u8; 8] = b"IGAPWFT\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 8 + 32 + 8;

/// Everything that determines a table.
#[derive(Clone, Debug, PartialEq)]
pub struct CacheKey {
    pub potential_id: String,
    pub cutoff: usize,
    pub n_grid: usize,
    pub cheb_degree: usize,
    pub b: f64,
    pub a_c: f64,
}

impl CacheKey {
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.potential_id.as_bytes());
        h.update([0u8]);
        for v in [self.cutoff as u64, self.n_grid as u64, self.cheb_degree as u64] {
            h.update(v.to_le_bytes());
        }
        h.update(self.b.to_bits().to_le_bytes());
        h.update(self.a_c.to_bits().to_le_bytes());
        h.finalize().into()
    }

    pub fn file_name(&self) -> String {
        let d = self.digest();
        let hex: String = d[..12].iter().map(|b| format!("{b:02x}")).collect();
        format!("vout-{hex}.bin")
    }
}

pub fn encode(table: &FourierTable, key: &CacheKey) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * table.values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(table.dim as u32).to_le_bytes());
    out.extend_from_slice(&table.extent.to_le_bytes());
    out.extend_from_slice(&key.digest());
    out.extend_from_slice(&(table.values.len() as u64).to_le_bytes());
    for z in &table.values {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    out
}

/// Parsed header fields.
#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub version: u32,
    pub dim: usize,
    pub extent: i64,
    pub digest: [u8; 32],
    pub count: u64,
}

fn take<const N: usize>(bytes: &[u8], at: &mut usize) -> Result<[u8; N]> {
    let end = at.checked_add(N).filter(|&e| e <= bytes.len()).ok_or_else(|| Error::Format("truncated cache file".into()))?;
    let mut a = [0u8; N];
    a.copy_from_slice(&bytes[*at..end]);
    *at = end;
    Ok(a)
}

pub fn decode_header(bytes: &[u8]) -> Result<Header> {
    let mut at = 0;
    let magic: [u8; 8] = take(bytes, &mut at)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(bytes, &mut at)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported cache version {version}")));
    }
    let dim = u32::from_le_bytes(take(bytes, &mut at)?) as usize;
    if dim != 2 && dim != 3 {
        return Err(Error::Format(format!("bad dimension {dim}")));
    }
    let extent = i64::from_le_bytes(take(bytes, &mut at)?);
    if !(0..=1 << 16).contains(&extent) {
        return Err(Error::Format(format!("bad extent {extent}")));
    }
    let digest: [u8; 32] = take(bytes, &mut at)?;
    let count = u64::from_le_bytes(take(bytes, &mut at)?);
    Ok(Header {
        version,
        dim,
        extent,
        digest,
        count,
    })
}

/// Decodes a table; when `key` is given its digest must match.
pub fn decode(bytes: &[u8], key: Option<&CacheKey>) -> Result<FourierTable> {
    let h = decode_header(bytes)?;
    if let Some(k) = key {
        if k.digest() != h.digest {
            return Err(Error::Format("cache key mismatch".into()));
        }
    }
    let width = (2 * h.extent + 1) as u64;
    let expected = width.checked_pow(h.dim as u32).ok_or_else(|| Error::Format("extent overflow".into()))?;
    if h.count != expected {
        return Err(Error::Format(format!("entry count {} does not match extent ({expected})", h.count)));
    }
    let body = &bytes[HEADER_LEN..];
    if (body.len() as u64) != expected.saturating_mul(16) {
        return Err(Error::Format("body length does not match entry count".into()));
    }
    let values = body
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect();
    Ok(FourierTable {
        dim: h.dim,
        extent: h.extent,
        values,
    })
}

/// Reads the cached table for `key` from `dir`, or computes and stores it.
/// Unreadable or stale files are recomputed and overwritten.
pub fn load_or_compute<F>(dir: &Path, key: &CacheKey, compute: F) -> Result<FourierTable>
where
    F: FnOnce() -> Result<FourierTable>,
{
    let path = dir.join(key.file_name());
    if let Ok(bytes) = fs::read(&path) {
        match decode(&bytes, Some(key)) {
            Ok(t) => return Ok(t),
            Err(e) => log::warn!("ignoring cache file {}: {e}", path.display()),
        }
    }
    let table = compute()?;
    fs::create_dir_all(dir)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(&table, key))?;
    fs::rename(&tmp, &path)?;
    Ok(table)
}

/// Removes every cache file in `dir`; returns how many were deleted.
pub fn clear(dir: &Path) -> Result<usize> {
    let mut n = 0;
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
        Err(e) => return Err(e.into()),
    };
    for entry in entries {
        let p: PathBuf = entry?.path();
        let name = p.file_name().and_then(|s| s.to_str()).unwrap_or("");
        if name.starts_with("vout-") && name.ends_with(".bin") {
            fs::remove_file(&p)?;
            n += 1;
        }
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key() -> CacheKey {
        CacheKey {
            potential_id: "example1".into(),
            cutoff: 3,
            n_grid: 64,
            cheb_degree: 16,
            b: 0.1,
            a_c: 0.19,
        }
    }

    fn table() -> FourierTable {
        let mut t = FourierTable::zeros(2, 2);
        for (i, v) in t.values.iter_mut().enumerate() {
            *v = Complex64::new(i as f64 * 0.5, -(i as f64));
        }
        t
    }

    #[test]
    fn round_trip() {
        let bytes = encode(&table(), &key());
        assert_eq!(bytes.len(), HEADER_LEN + 25 * 16);
        assert_eq!(decode(&bytes, Some(&key())).unwrap(), table());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&table(), &key());
        let mut other = key();
        other.n_grid = 65;
        assert!(decode(&bytes, Some(&other)).is_err());
        assert!(decode(&bytes[..bytes.len() - 1], None).is_err());
        assert!(decode(&bytes[..10], None).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad, None).is_err());
        let mut bad = bytes;
        bad[16] = 7;
        assert!(decode(&bad, None).is_err());
    }

    #[test]
    fn load_or_compute_caches() {
        let dir = tempfile::tempdir().unwrap();
        let mut calls = 0;
        let a = load_or_compute(dir.path(), &key(), || {
            calls += 1;
            Ok(table())
        })
        .unwrap();
        let b = load_or_compute(dir.path(), &key(), || panic!("should hit the cache")).unwrap();
        assert_eq!(calls, 1);
        assert_eq!(a, b);
        fs::write(dir.path().join(key().file_name()), b"garbage").unwrap();
        let c = load_or_compute(dir.path(), &key(), || Ok(table())).unwrap();
        assert_eq!(c, a);
        assert_eq!(clear(dir.path()).unwrap(), 1);
        assert_eq!(clear(dir.path()).unwrap(), 0);
    }
}
