//! Separable tensor contractions, uniform-grid FFTs, and truncated Fourier
//! series on the periodic cell.

use faer::linalg::matmul::matmul;
use faer::{Accum, MatMut, MatRef, Par};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::geometry::{Point, UnitCell};

const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Dense per-axis operator `m × a` in row-major order.
#[derive(Clone, Debug)]
pub struct AxisMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl AxisMatrix {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }
}

/// Applies one matrix per axis to a tensor stored first-axis-fastest:
/// `out[j_0, j_1, ...] = Σ_n A_0[j_0, n_0] A_1[j_1, n_1] ... in[n_0, n_1, ...]`.
pub fn contract(input: &[Complex64], shape: &[usize], mats: &[&AxisMatrix]) -> Vec<Complex64> {
    assert_eq!(shape.len(), mats.len());
    assert_eq!(input.len(), shape.iter().product::<usize>());
    let mut cur = input.to_vec();
    let mut cur_shape = shape.to_vec();
    for m in mats {
        let a0 = cur_shape[0];
        assert_eq!(m.cols, a0);
        let rest = cur.len() / a0.max(1);
        let mut out = vec![Complex64::new(0.0, 0.0); rest * m.rows];
        if rest > 0 && m.rows > 0 && a0 > 0 {
            let a = MatRef::from_column_major_slice(&cur, a0, rest);
            // row-major m×a0 read as column-major a0×m is the transpose
            let et = MatRef::from_column_major_slice(&m.data, a0, m.rows);
            let o = MatMut::from_column_major_slice_mut(&mut out, rest, m.rows);
            matmul(o, Accum::Replace, a.transpose(), et, ONE, Par::Seq);
        }
        cur = out;
        cur_shape.remove(0);
        cur_shape.push(m.rows);
    }
    cur
}

/// Coordinates `-L/2 + jL/N` of a uniform periodic grid.
pub fn uniform_axis(cell: &UnitCell, n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| -0.5 * cell.length + j as f64 * cell.length / n as f64)
        .collect()
}

/// In-place multidimensional FFT over a first-axis-fastest array.
pub fn fft_nd(data: &mut [Complex64], shape: &[usize], inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let total: usize = shape.iter().product();
    assert_eq!(data.len(), total);
    let mut stride = 1;
    for &n in shape {
        let fft = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let block = stride * n;
        for outer in 0..total / block {
            for inner in 0..stride {
                let base = outer * block + inner;
                for (j, l) in line.iter_mut().enumerate() {
                    *l = data[base + j * stride];
                }
                fft.process(&mut line);
                for (j, l) in line.iter().enumerate() {
                    data[base + j * stride] = *l;
                }
            }
        }
        stride *= n;
    }
}

/// Fourier coefficients `(1/|Ω|) ∫ f e^{-iG·r}` of samples on the uniform
/// grid returned by [`uniform_axis`], as a dense first-axis-fastest array of
/// wrapped indices.
pub fn grid_coefficients(samples: &[f64], n: usize, dim: usize) -> Vec<Complex64> {
    let shape = vec![n; dim];
    let mut data: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&mut data, &shape, false);
    let scale = 1.0 / (n as f64).powi(dim as i32);
    // grid starts at -L/2, so every index picks up a factor (-1)^n
    for (flat, v) in data.iter_mut().enumerate() {
        let mut f = flat;
        let mut parity = 0;
        for _ in 0..dim {
            parity += wrapped(f % n, n);
            f /= n;
        }
        let sign = if parity.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        *v *= scale * sign;
    }
    data
}

/// Signed frequency of a wrapped FFT index.
pub fn wrapped(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Truncated Fourier series `Σ_n c_n e^{i G_n·r}` over the box `|n_s| ≤ M_s`.
#[derive(Clone, Debug)]
pub struct FourierSeries {
    pub cell: UnitCell,
    pub extent: [i64; 3],
    pub coeffs: Vec<Complex64>,
}

impl FourierSeries {
    pub fn zeros(cell: UnitCell, extent: i64) -> Self {
        let mut e = [0; 3];
        for s in e.iter_mut().take(cell.dim) {
            *s = extent;
        }
        let len = e.iter().map(|m| (2 * m + 1) as usize).product();
        Self {
            cell,
            extent: e,
            coeffs: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    pub fn from_fn(cell: UnitCell, extent: i64, mut f: impl FnMut([i64; 3]) -> Complex64) -> Self {
        let mut out = Self::zeros(cell, extent);
        for flat in 0..out.coeffs.len() {
            let n = out.index_of(flat);
            out.coeffs[flat] = f(n);
        }
        out
    }

    pub fn shape(&self) -> Vec<usize> {
        (0..self.cell.dim).map(|s| (2 * self.extent[s] + 1) as usize).collect()
    }

    pub fn index_of(&self, mut flat: usize) -> [i64; 3] {
        let mut n = [0; 3];
        for s in 0..self.cell.dim {
            let w = (2 * self.extent[s] + 1) as usize;
            n[s] = (flat % w) as i64 - self.extent[s];
            flat /= w;
        }
        n
    }

    pub fn flat_of(&self, n: &[i64; 3]) -> Option<usize> {
        let mut flat = 0;
        let mut stride = 1;
        for s in 0..self.cell.dim {
            let m = self.extent[s];
            if n[s].abs() > m {
                return None;
            }
            flat += (n[s] + m) as usize * stride;
            stride *= (2 * m + 1) as usize;
        }
        Some(flat)
    }

    pub fn coeff(&self, n: &[i64; 3]) -> Complex64 {
        self.flat_of(n).map_or(Complex64::new(0.0, 0.0), |i| self.coeffs[i])
    }

    /// Wave vector of a lattice index.
    pub fn wave_vector(&self, n: &[i64; 3]) -> Point {
        let g = self.cell.dual_spacing();
        [g * n[0] as f64, g * n[1] as f64, g * n[2] as f64]
    }

    /// Real part of the series at one point.
    pub fn eval(&self, r: &Point) -> f64 {
        let axes: Vec<Vec<f64>> = (0..self.cell.dim).map(|s| vec![r[s]]).collect();
        self.eval_grid(&axes)[0]
    }

    /// Real part of the series on a tensor grid, first axis fastest.
    pub fn eval_grid(&self, axes: &[Vec<f64>]) -> Vec<f64> {
        self.eval_grid_complex(axes).into_iter().map(|z| z.re).collect()
    }

    pub fn eval_grid_complex(&self, axes: &[Vec<f64>]) -> Vec<Complex64> {
        let d = self.cell.dim;
        assert_eq!(axes.len(), d);
        let g = self.cell.dual_spacing();
        let mats: Vec<AxisMatrix> = (0..d)
            .map(|s| {
                let m = self.extent[s];
                AxisMatrix::from_fn(axes[s].len(), (2 * m + 1) as usize, |j, n| {
                    Complex64::from_polar(1.0, g * (n as i64 - m) as f64 * axes[s][j])
                })
            })
            .collect();
        let refs: Vec<&AxisMatrix> = mats.iter().collect();
        contract(&self.coeffs, &self.shape(), &refs)
    }

    /// Builds a series from samples on the uniform grid, keeping `|n_s| ≤ extent`.
    pub fn from_samples(cell: UnitCell, samples: &[f64], n: usize, extent: i64) -> Result<Self> {
        if 2 * extent as usize + 1 > n {
            return Err(Error::Aliasing {
                got: n,
                index: extent,
                required: 2 * extent as usize + 1,
            });
        }
        let c = grid_coefficients(samples, n, cell.dim);
        Ok(Self::from_fn(cell, extent, |idx| {
            let mut flat = 0;
            let mut stride = 1;
            for s in 0..cell.dim {
                flat += idx[s].rem_euclid(n as i64) as usize * stride;
                stride *= n;
            }
            c[flat]
        }))
    }

    /// Largest `|c_n - conj(c_{-n})|`; zero for real fields.
    pub fn reality_defect(&self) -> f64 {
        (0..self.coeffs.len())
            .map(|i| {
                let n = self.index_of(i);
                (self.coeffs[i] - self.coeff(&[-n[0], -n[1], -n[2]]).conj()).norm()
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contraction_matches_loops() {
        let shape = [3usize, 4, 2];
        let input: Vec<Complex64> = (0..24).map(|i| Complex64::new(i as f64, (i % 5) as f64)).collect();
        let mats: Vec<AxisMatrix> = shape
            .iter()
            .enumerate()
            .map(|(s, &a)| AxisMatrix::from_fn(a + s + 1, a, |i, j| Complex64::new((i + 2 * j) as f64, s as f64 - j as f64)))
            .collect();
        let refs: Vec<&AxisMatrix> = mats.iter().collect();
        let out = contract(&input, &shape, &refs);
        let m: Vec<usize> = mats.iter().map(|m| m.rows).collect();
        for j2 in 0..m[2] {
            for j1 in 0..m[1] {
                for j0 in 0..m[0] {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for n2 in 0..2 {
                        for n1 in 0..4 {
                            for n0 in 0..3 {
                                acc += mats[0].data[j0 * 3 + n0]
                                    * mats[1].data[j1 * 4 + n1]
                                    * mats[2].data[j2 * 2 + n2]
                                    * input[n0 + 3 * (n1 + 4 * n2)];
                            }
                        }
                    }
                    let got = out[j0 + m[0] * (j1 + m[1] * j2)];
                    assert!((acc - got).norm() < 1e-9 * acc.norm().max(1.0));
                }
            }
        }
    }

    #[test]
    fn series_round_trip() {
        let cell = UnitCell::new(4.0, 2).unwrap();
        let series = FourierSeries::from_fn(cell, 3, |n| {
            if n == [1, 0, 0] || n == [-1, 0, 0] {
                Complex64::new(0.5, 0.0)
            } else if n == [0, 2, 0] {
                Complex64::new(0.0, 0.25)
            } else if n == [0, -2, 0] {
                Complex64::new(0.0, -0.25)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let g = cell.dual_spacing();
        let r = [0.3, -0.7, 0.0];
        let exact = (g * r[0]).cos() - 0.5 * (2.0 * g * r[1]).sin();
        assert!((series.eval(&r) - exact).abs() < 1e-14);
        assert!(series.reality_defect() < 1e-16);

        let n = 16;
        let ax = uniform_axis(&cell, n);
        let samples = series.eval_grid(&[ax.clone(), ax.clone()]);
        let back = FourierSeries::from_samples(cell, &samples, n, 5).unwrap();
        for i in 0..back.coeffs.len() {
            let idx = back.index_of(i);
            assert!((back.coeffs[i] - series.coeff(&idx)).norm() < 1e-14);
        }
        assert!(FourierSeries::from_samples(cell, &samples, n, 8).is_err());
    }

    #[test]
    fn fft_inverse_round_trip() {
        let shape = [4usize, 6, 5];
        let orig: Vec<Complex64> = (0..120).map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let mut data = orig.clone();
        fft_nd(&mut data, &shape, false);
        fft_nd(&mut data, &shape, true);
        for (a, b) in data.iter().zip(&orig) {
            assert!((a / 120.0 - b).norm() < 1e-13);
        }
    }
}
