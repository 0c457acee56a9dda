//! Compressed-row storage for the real symmetric spline blocks.

use std::sync::Arc;

use num_complex::Complex64;

/// Row pointers and sorted column indices, shared between matrices with
/// the same sparsity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pattern {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
}

impl Pattern {
    /// Builds a pattern from per-row column lists (sorted and deduplicated here).
    pub fn from_rows(rows: Vec<Vec<usize>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            cols.extend(r);
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols }
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Storage position of `(i, j)`.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        self.row(i).binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    /// Block-diagonal concatenation.
    pub fn block_diag(parts: &[&Pattern]) -> Self {
        let mut rows = Vec::new();
        let mut off = 0;
        for p in parts {
            for i in 0..p.n {
                rows.push(p.row(i).iter().map(|j| j + off).collect());
            }
            off += p.n;
        }
        Self::from_rows(rows)
    }
}

/// Real square matrix in compressed-row form.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub pattern: Arc<Pattern>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn zeros(pattern: Arc<Pattern>) -> Self {
        let vals = vec![0.0; pattern.nnz()];
        Self { pattern, vals }
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.find(i, j).map_or(0.0, |k| self.vals[k])
    }

    /// Adds `v` at `(i, j)`; panics when the entry is outside the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .pattern
            .find(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside the sparsity pattern"));
        self.vals[k] += v;
    }

    /// `self + a * other` on a shared pattern.
    pub fn axpy(&self, a: f64, other: &Csr) -> Csr {
        assert!(Arc::ptr_eq(&self.pattern, &other.pattern) || self.pattern == other.pattern);
        let vals = self.vals.iter().zip(&other.vals).map(|(x, y)| x + a * y).collect();
        Csr {
            pattern: self.pattern.clone(),
            vals,
        }
    }

    pub fn scaled(&self, a: f64) -> Csr {
        Csr {
            pattern: self.pattern.clone(),
            vals: self.vals.iter().map(|v| a * v).collect(),
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.get(i, i)).collect()
    }

    /// `y += A x` for complex vectors.
    pub fn mul_add(&self, x: &[Complex64], y: &mut [Complex64]) {
        let p = &self.pattern;
        for i in 0..p.n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                acc += x[p.cols[k]] * self.vals[k];
            }
            y[i] += acc;
        }
    }

    /// Largest `|A_ij - A_ji|`.
    pub fn symmetry_defect(&self) -> f64 {
        let p = &self.pattern;
        let mut worst = 0.0f64;
        for i in 0..p.n {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                let j = p.cols[k];
                worst = worst.max((self.vals[k] - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Dense copy, row-major.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1] {
                out[i * n + self.pattern.cols[k]] = self.vals[k];
            }
        }
        out
    }

    pub fn block_diag(parts: &[&Csr]) -> Csr {
        let pats: Vec<&Pattern> = parts.iter().map(|c| c.pattern.as_ref()).collect();
        let pattern = Arc::new(Pattern::block_diag(&pats));
        let vals = parts.iter().flat_map(|c| c.vals.iter().copied()).collect();
        Csr { pattern, vals }
    }
}
