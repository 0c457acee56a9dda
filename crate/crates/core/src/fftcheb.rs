//! Interstitial Fourier integrals `V_out(Δk) = (1/|Ω|) ∫_{Ω_out} V e^{iΔk·r}`
//! evaluated as a full-cell FFT of a bounded extension minus a Chebyshev
//! correction on every patch.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fourier::{contract, grid_coefficients, uniform_axis, AxisMatrix};
use crate::geometry::{gauss_legendre, AtomicPatch, DomainDecomposition, Point, UnitCell};
use crate::potentials::{smooth_extend, PotentialField, SmoothExtensionParams};

/// Values indexed by dual-lattice offsets `n` with `|n_s| ≤ extent`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierTable {
    pub dim: usize,
    pub extent: i64,
    pub values: Vec<Complex64>,
}

impl FourierTable {
    pub fn zeros(dim: usize, extent: i64) -> Self {
        let w = (2 * extent + 1) as usize;
        Self {
            dim,
            extent,
            values: vec![Complex64::new(0.0, 0.0); w.pow(dim as u32)],
        }
    }

    pub fn width(&self) -> usize {
        (2 * self.extent + 1) as usize
    }

    pub fn flat_of(&self, n: &[i64; 3]) -> Option<usize> {
        let w = self.width();
        let mut flat = 0;
        let mut stride = 1;
        for s in 0..self.dim {
            if n[s].abs() > self.extent {
                return None;
            }
            flat += (n[s] + self.extent) as usize * stride;
            stride *= w;
        }
        Some(flat)
    }

    pub fn index_of(&self, mut flat: usize) -> [i64; 3] {
        let w = self.width();
        let mut n = [0; 3];
        for s in 0..self.dim {
            n[s] = (flat % w) as i64 - self.extent;
            flat /= w;
        }
        n
    }

    pub fn get(&self, n: &[i64; 3]) -> Result<Complex64> {
        self.flat_of(n)
            .map(|i| self.values[i])
            .ok_or_else(|| Error::MissingEntry(n[..self.dim].to_vec()))
    }

    /// Largest `|J(-n) - conj(J(n))|`.
    pub fn conjugate_defect(&self) -> f64 {
        (0..self.values.len())
            .map(|i| {
                let n = self.index_of(i);
                let j = self.flat_of(&[-n[0], -n[1], -n[2]]).unwrap();
                (self.values[j] - self.values[i].conj()).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Euclidean distance between two tables over the offsets with `|n| ≤ radius`.
    pub fn l2_distance(&self, other: &FourierTable, radius: f64) -> f64 {
        let r2 = radius * radius;
        let mut acc = 0.0;
        for i in 0..self.values.len() {
            let n = self.index_of(i);
            if (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]) as f64 > r2 + 1e-9 {
                continue;
            }
            if let Ok(v) = other.get(&n) {
                acc += (self.values[i] - v).norm_sqr();
            }
        }
        acc.sqrt()
    }

    pub fn sub_assign(&mut self, other: &FourierTable) {
        assert_eq!(self.extent, other.extent);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a -= b;
        }
    }

    pub fn add_assign(&mut self, other: &FourierTable) {
        assert_eq!(self.extent, other.extent);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }
}

/// `J_Ω(Δk) = (1/|Ω|) ∫_Ω f e^{iΔk·r}` from samples on an `n_grid^d` grid.
pub fn full_cell_fourier(field: &dyn PotentialField, cell: &UnitCell, n_grid: usize, extent: i64) -> Result<FourierTable> {
    if n_grid < 2 * extent as usize + 1 {
        return Err(Error::Aliasing {
            got: n_grid,
            index: extent,
            required: 2 * extent as usize + 1,
        });
    }
    let ax = uniform_axis(cell, n_grid);
    let axes = vec![ax; cell.dim];
    let samples = field.eval_grid(&axes);
    Ok(table_from_samples(&samples, n_grid, cell.dim, extent))
}

/// Same as [`full_cell_fourier`] with samples zeroed inside every patch.
pub fn masked_fft(field: &dyn PotentialField, decomp: &DomainDecomposition, n_grid: usize, extent: i64) -> Result<FourierTable> {
    let cell = &decomp.cell;
    if n_grid < 2 * extent as usize + 1 {
        return Err(Error::Aliasing {
            got: n_grid,
            index: extent,
            required: 2 * extent as usize + 1,
        });
    }
    let ax = uniform_axis(cell, n_grid);
    let d = cell.dim;
    let mut samples = vec![0.0; n_grid.pow(d as u32)];
    let smooth = field.smooth_grid(&vec![ax.clone(); d]);
    crate::potentials::for_each_grid_point(&vec![ax; d], |flat, r| {
        let inside = decomp.patches.iter().any(|p| p.contains(r, d, 0.0));
        if !inside {
            samples[flat] = smooth[flat] + field.rough(r);
        }
    });
    Ok(table_from_samples(&samples, n_grid, d, extent))
}

fn table_from_samples(samples: &[f64], n_grid: usize, dim: usize, extent: i64) -> FourierTable {
    let c = grid_coefficients(samples, n_grid, dim);
    let mut t = FourierTable::zeros(dim, extent);
    for i in 0..t.values.len() {
        let n = t.index_of(i);
        // J(Δk) is the coefficient of e^{-iΔk·r}
        let mut flat = 0;
        let mut stride = 1;
        for s in 0..dim {
            flat += (-n[s]).rem_euclid(n_grid as i64) as usize * stride;
            stride *= n_grid;
        }
        t.values[i] = c[flat];
    }
    t
}

/// Tensor Chebyshev expansion `Σ c_{rs..} T_r(x/R) T_s(y/R) ..` on one patch,
/// in coordinates relative to the patch center.
#[derive(Clone, Debug)]
pub struct ChebyshevExpansion {
    pub n: usize,
    pub dim: usize,
    pub coeffs: Vec<f64>,
    pub center: Point,
    pub half_width: f64,
}

/// Chebyshev-Gauss-Lobatto nodes `cos(πj/(n-1))` on `[-1, 1]`.
pub fn lobatto_nodes(n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| (std::f64::consts::PI * j as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Interpolates at the tensor Lobatto nodes.
pub fn chebyshev_fit(field: &dyn PotentialField, patch: &AtomicPatch, n: usize) -> Result<ChebyshevExpansion> {
    if n < 4 {
        return Err(Error::InvalidParameter(format!("Chebyshev degree must be at least 4, got {n}")));
    }
    let d = field.dim();
    let t = lobatto_nodes(n);
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|s| t.iter().map(|x| patch.center[s] + patch.half_width * x).collect())
        .collect();
    let samples = field.eval_grid(&axes);
    Ok(fit_from_lobatto_samples(&samples, n, d, patch))
}

/// Discrete cosine transform of Lobatto samples into Chebyshev coefficients.
pub fn fit_from_lobatto_samples(samples: &[f64], n: usize, d: usize, patch: &AtomicPatch) -> ChebyshevExpansion {
    let m = (n - 1) as f64;
    let dct = AxisMatrix::from_fn(n, n, |r, j| {
        let mut w = 2.0 / m * (std::f64::consts::PI * (r * j) as f64 / m).cos();
        if j == 0 || j == n - 1 {
            w *= 0.5;
        }
        if r == 0 || r == n - 1 {
            w *= 0.5;
        }
        Complex64::new(w, 0.0)
    });
    let data: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let refs = vec![&dct; d];
    let coeffs = contract(&data, &vec![n; d], &refs).into_iter().map(|z| z.re).collect();
    ChebyshevExpansion {
        n,
        dim: d,
        coeffs,
        center: patch.center,
        half_width: patch.half_width,
    }
}

impl ChebyshevExpansion {
    /// Values on a tensor grid of physical coordinates.
    pub fn eval_grid(&self, axes: &[Vec<f64>]) -> Vec<f64> {
        let mats: Vec<AxisMatrix> = (0..self.dim)
            .map(|s| {
                AxisMatrix::from_fn(axes[s].len(), self.n, |j, r| {
                    let x = ((axes[s][j] - self.center[s]) / self.half_width).clamp(-1.0, 1.0);
                    Complex64::new((r as f64 * x.acos()).cos(), 0.0)
                })
            })
            .collect();
        let refs: Vec<&AxisMatrix> = mats.iter().collect();
        let data: Vec<Complex64> = self.coeffs.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        contract(&data, &vec![self.n; self.dim], &refs).into_iter().map(|z| z.re).collect()
    }

    pub fn eval(&self, r: &Point) -> f64 {
        let axes: Vec<Vec<f64>> = (0..self.dim).map(|s| vec![r[s]]).collect();
        self.eval_grid(&axes)[0]
    }

    /// Largest coefficient with a top-two degree along some axis, relative to
    /// the largest coefficient. Two degrees because even fits have zero odd tails.
    pub fn tail_ratio(&self) -> f64 {
        let max = self.coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        let mut tail = 0.0f64;
        for (flat, c) in self.coeffs.iter().enumerate() {
            let mut f = flat;
            let mut top = false;
            for _ in 0..self.dim {
                top |= f % self.n + 2 >= self.n;
                f /= self.n;
            }
            if top {
                tail = tail.max(c.abs());
            }
        }
        tail / max
    }
}

/// `q_r(k) = ∫_{-R}^{R} T_r(x/R) e^{ikx} dx` for `r < n` and every `k`.
#[derive(Clone, Debug)]
pub struct OscillatoryTable {
    pub n: usize,
    pub half_width: f64,
    pub ks: Vec<f64>,
    /// Row-major `ks.len() × n`.
    pub q: Vec<Complex64>,
}

pub fn oscillatory_integrals(n: usize, ks: &[f64], half_width: f64) -> OscillatoryTable {
    let mut q = Vec::with_capacity(ks.len() * n);
    for &k in ks {
        let w = k * half_width;
        let order = n + w.abs().ceil() as usize + 40;
        let (x, wt) = gauss_legendre(order);
        let phases: Vec<Complex64> = x.iter().zip(&wt).map(|(t, wi)| Complex64::from_polar(wi * half_width, w * t)).collect();
        // T_r by the three-term recurrence at every node
        let mut t0: Vec<f64> = vec![1.0; order];
        let mut t1: Vec<f64> = x.clone();
        for r in 0..n {
            let tr = match r {
                0 => &t0,
                _ => &t1,
            };
            let val: Complex64 = tr.iter().zip(&phases).map(|(a, p)| p * *a).sum();
            q.push(val);
            if r >= 1 {
                let next: Vec<f64> = x.iter().zip(t1.iter().zip(&t0)).map(|(xi, (a, b))| 2.0 * xi * a - b).collect();
                t0 = std::mem::replace(&mut t1, next);
            }
        }
    }
    OscillatoryTable {
        n,
        half_width,
        ks: ks.to_vec(),
        q,
    }
}

impl OscillatoryTable {
    pub fn get(&self, k_index: usize, r: usize) -> Complex64 {
        self.q[k_index * self.n + r]
    }
}

/// `J_in(Δk) = (1/|Ω|) e^{iΔk·c} Σ c_{rs..} q_r(Δk_1) q_s(Δk_2) ..` for every
/// offset of the table. `q` must be tabulated at `k = (2π/L) m`, `|m| ≤ extent`.
pub fn inner_patch_fourier(expansion: &ChebyshevExpansion, q: &OscillatoryTable, cell: &UnitCell, extent: i64) -> Result<FourierTable> {
    let g = cell.dual_spacing();
    let w = (2 * extent + 1) as usize;
    let mut rows = Vec::with_capacity(w);
    for m in -extent..=extent {
        let k = g * m as f64;
        let idx = q
            .ks
            .iter()
            .position(|&x| (x - k).abs() <= 1e-9 * k.abs().max(1.0))
            .ok_or_else(|| Error::MissingEntry(vec![m]))?;
        rows.push(idx);
    }
    if q.n < expansion.n {
        return Err(Error::InvalidParameter("oscillatory table has fewer degrees than the expansion".into()));
    }
    let d = expansion.dim;
    let mats: Vec<AxisMatrix> = (0..d)
        .map(|s| {
            AxisMatrix::from_fn(w, expansion.n, |a, r| {
                let k = g * (a as i64 - extent) as f64;
                q.get(rows[a], r) * Complex64::from_polar(1.0, k * expansion.center[s])
            })
        })
        .collect();
    let refs: Vec<&AxisMatrix> = mats.iter().collect();
    let data: Vec<Complex64> = expansion.coeffs.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let vol = cell.volume();
    let values = contract(&data, &vec![expansion.n; d], &refs).into_iter().map(|z| z / vol).collect();
    Ok(FourierTable { dim: d, extent, values })
}

/// Lattice wave numbers `(2π/L) m` for `|m| ≤ extent`.
pub fn lattice_components(cell: &UnitCell, extent: i64) -> Vec<f64> {
    let g = cell.dual_spacing();
    (-extent..=extent).map(|m| g * m as f64).collect()
}

/// Settings of the interstitial integral evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoutSettings {
    pub n_grid: usize,
    pub cheb_degree: usize,
    pub extension: SmoothExtensionParams,
}

/// Full pipeline for a field that may be singular at the nuclei: extend,
/// FFT over the cell, subtract the Chebyshev patch integrals.
pub fn v_out_table(field: Arc<dyn PotentialField>, decomp: &DomainDecomposition, cutoff: usize, settings: &VoutSettings) -> Result<FourierTable> {
    let extent = 2 * cutoff as i64;
    let ext = smooth_extend(field, decomp.cell, &decomp.patches, settings.extension)?;
    let mut table = full_cell_fourier(&ext, &decomp.cell, settings.n_grid, extent)?;
    let ks = lattice_components(&decomp.cell, extent);
    for patch in &decomp.patches {
        let fit = chebyshev_fit(&ext, patch, settings.cheb_degree)?;
        let q = oscillatory_integrals(settings.cheb_degree, &ks, patch.half_width);
        table.sub_assign(&inner_patch_fourier(&fit, &q, &decomp.cell, extent)?);
    }
    Ok(table)
}

/// Interstitial integrals of a smooth Fourier series: exact full-cell
/// coefficients minus Chebyshev patch integrals.
pub fn v_out_table_series(series: &crate::fourier::FourierSeries, decomp: &DomainDecomposition, extent: i64, cheb_degree: usize) -> Result<FourierTable> {
    let d = decomp.dim();
    let mut table = FourierTable::zeros(d, extent);
    for i in 0..table.values.len() {
        let n = table.index_of(i);
        table.values[i] = series.coeff(&[-n[0], -n[1], -n[2]]);
    }
    let ks = lattice_components(&decomp.cell, extent);
    for patch in &decomp.patches {
        let fit = chebyshev_fit(series, patch, cheb_degree)?;
        let q = oscillatory_integrals(cheb_degree, &ks, patch.half_width);
        table.sub_assign(&inner_patch_fourier(&fit, &q, &decomp.cell, extent)?);
    }
    Ok(table)
}
