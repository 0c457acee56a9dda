//! Coordinate-format dump of complex matrices for external cross-checks.
//!
//! Layout, little-endian: magic `IGAPWCOO`, `u32` version, `u64` rows,
//! `u64` cols, `u64` nnz, then nnz records `(u64 i, u64 j, f64 re, f64 im)`.

use std::io::{Read, Write};

use faer::MatRef;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"IGAPWCOO";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 24;
const RECORD_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct CooMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, Complex64)>,
}

impl CooMatrix {
    /// Nonzero entries of a dense matrix, column major.
    pub fn from_dense(a: MatRef<'_, Complex64>) -> Self {
        let mut entries = Vec::new();
        for j in 0..a.ncols() {
            for i in 0..a.nrows() {
                let v = a[(i, j)];
                if v.re != 0.0 || v.im != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        Self {
            rows: a.nrows(),
            cols: a.ncols(),
            entries,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * self.entries.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [self.rows, self.cols, self.entries.len()] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for &(i, j, v) in &self.entries {
            out.extend_from_slice(&(i as u64).to_le_bytes());
            out.extend_from_slice(&(j as u64).to_le_bytes());
            out.extend_from_slice(&v.re.to_le_bytes());
            out.extend_from_slice(&v.im.to_le_bytes());
        }
        out
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    /// Parses and validates a dump: magic, version, exact length, indices in
    /// range, finite values.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("matrix export: {m}"));
        if bytes.len() < HEADER_LEN {
            return Err(bad("truncated header"));
        }
        if &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let (rows, cols, nnz) = (word(12), word(20), word(28));
        let body = (bytes.len() - HEADER_LEN) as u64;
        if nnz.checked_mul(RECORD_LEN as u64) != Some(body) {
            return Err(bad("record count does not match the length"));
        }
        let rows = usize::try_from(rows).map_err(|_| bad("row count overflows"))?;
        let cols = usize::try_from(cols).map_err(|_| bad("column count overflows"))?;
        let mut entries = Vec::with_capacity(nnz as usize);
        for rec in bytes[HEADER_LEN..].chunks_exact(RECORD_LEN) {
            let i = u64::from_le_bytes(rec[0..8].try_into().unwrap());
            let j = u64::from_le_bytes(rec[8..16].try_into().unwrap());
            let re = f64::from_le_bytes(rec[16..24].try_into().unwrap());
            let im = f64::from_le_bytes(rec[24..32].try_into().unwrap());
            if i >= rows as u64 || j >= cols as u64 {
                return Err(bad("index out of range"));
            }
            if !re.is_finite() || !im.is_finite() {
                return Err(bad("non-finite value"));
            }
            entries.push((i as usize, j as usize, Complex64::new(re, im)));
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Dense copy; repeated coordinates are summed.
    pub fn to_dense(&self) -> faer::Mat<Complex64> {
        let mut a = faer::Mat::<Complex64>::zeros(self.rows, self.cols);
        for &(i, j, v) in &self.entries {
            a[(i, j)] += v;
        }
        a
    }
}
