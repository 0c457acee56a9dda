//! Discrete DG functions: pointwise evaluation, cross inner products,
//! L² / DG error norms, densities, and exact interstitial tables of
//! trigonometric fields.

use std::collections::HashMap;

use faer::Mat;
use num_complex::Complex64;

use crate::assembly::{AxisData, Discretization};
use crate::fftcheb::FourierTable;
use crate::fourier::{contract, AxisMatrix, FourierSeries};
use crate::geometry::{gauss_legendre, DomainDecomposition, FaceSide, Point, Region};
use crate::planewave::{box_integral_1d, geometric_factor_u};
use crate::potentials::PotentialField;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Coefficient vector of a discretization, viewed as a function on the cell.
#[derive(Clone, Copy)]
pub struct Orbital<'a> {
    pub disc: &'a Discretization,
    pub coeffs: &'a [Complex64],
}

impl<'a> Orbital<'a> {
    pub fn new(disc: &'a Discretization, coeffs: &'a [Complex64]) -> Self {
        assert_eq!(coeffs.len(), disc.dofs.total());
        Self { disc, coeffs }
    }

    pub fn pw(&self) -> &'a [Complex64] {
        &self.coeffs[..self.disc.dofs.n_pw]
    }

    pub fn spline(&self, patch: usize) -> &'a [Complex64] {
        let off = self.disc.dofs.spline_offset(patch);
        &self.coeffs[off..off + self.disc.dofs.n_spline_patch]
    }

    /// Plane-wave expansion and its gradient at `r`.
    pub fn eval_out(&self, r: &Point) -> (Complex64, [Complex64; 3]) {
        let vol = self.disc.decomp.cell.volume();
        let mut v = ZERO;
        let mut g = [ZERO; 3];
        for (c, k) in self.pw().iter().zip(&self.disc.waves.vectors) {
            let e = *c * Complex64::from_polar(1.0, k[0] * r[0] + k[1] * r[1] + k[2] * r[2]);
            v += e;
            for s in 0..3 {
                g[s] += e * Complex64::new(0.0, k[s]);
            }
        }
        let f = vol.powf(-0.5);
        (v * f, g.map(|x| x * f))
    }

    /// Spline expansion of `patch` and its gradient at `r` (inside the patch).
    pub fn eval_in(&self, patch: usize, r: &Point) -> (Complex64, [Complex64; 3]) {
        let axes = self.disc.axis_data(patch);
        let local: Vec<(usize, Vec<f64>, Vec<f64>)> = axes
            .iter()
            .enumerate()
            .map(|(s, a)| {
                let xi = ((r[s] - a.lower) / a.length).clamp(0.0, 1.0);
                a.local_eval(r[s], a.kv.element_of(xi))
            })
            .collect();
        tensor_value(&self.disc.space.shape(), self.spline(patch), &local)
    }

    /// Value at any point of the cell; interface points use the patch side.
    pub fn eval(&self, r: &Point) -> Complex64 {
        let w = self.disc.decomp.cell.wrap(r);
        match self.disc.decomp.classify(&w) {
            Region::Patch(j) => self.eval_in(j, &w).0,
            Region::Interstitial => self.eval_out(&w).0,
        }
    }
}

/// Value and gradient of a tensor spline from per-axis local data.
fn tensor_value(shape: &[usize], coeffs: &[Complex64], local: &[(usize, Vec<f64>, Vec<f64>)]) -> (Complex64, [Complex64; 3]) {
    let d = local.len();
    let nl: Vec<usize> = local.iter().map(|l| l.1.len()).collect();
    let total: usize = nl.iter().product();
    let mut v = ZERO;
    let mut g = [ZERO; 3];
    for mut f in 0..total {
        let mut flat = 0;
        let mut stride = 1;
        let mut val = 1.0;
        let mut der = [1.0; 3];
        for s in 0..d {
            let l = f % nl[s];
            f /= nl[s];
            flat += (local[s].0 + l) * stride;
            stride *= shape[s];
            val *= local[s].1[l];
            for (t, dt) in der.iter_mut().enumerate().take(d) {
                *dt *= if t == s { local[s].2[l] } else { local[s].1[l] };
            }
        }
        let c = coeffs[flat];
        v += c * val;
        for s in 0..d {
            g[s] += c * der[s];
        }
    }
    (v, g)
}

/// `U(Δn)` for `|Δn_s| ≤ extent`.
pub fn u_table(decomp: &DomainDecomposition, extent: i64) -> FourierTable {
    let mut t = FourierTable::zeros(decomp.dim(), extent);
    let g = decomp.cell.dual_spacing();
    for i in 0..t.values.len() {
        let n = t.index_of(i);
        t.values[i] = geometric_factor_u(&[g * n[0] as f64, g * n[1] as f64, g * n[2] as f64], decomp);
    }
    t
}

/// Plane-wave coefficients of two orbitals on the union of their index sets.
fn union_pw(a: &Orbital<'_>, b: &Orbital<'_>, wa: Complex64, wb: Complex64) -> (Vec<[i64; 3]>, Vec<Complex64>) {
    let mut map: HashMap<[i64; 3], usize> = HashMap::new();
    let mut idx = Vec::new();
    let mut val = Vec::new();
    for (orb, w) in [(a, wa), (b, wb)] {
        for (n, c) in orb.disc.waves.indices.iter().zip(orb.pw()) {
            let slot = *map.entry(*n).or_insert_with(|| {
                idx.push(*n);
                val.push(ZERO);
                idx.len() - 1
            });
            val[slot] += w * c;
        }
    }
    (idx, val)
}

/// `(∫_out |f|², ∫_out |∇f|²)` for `f = Σ c_n e_n` via the `U` table.
fn out_quadratic(idx: &[[i64; 3]], c: &[Complex64], u: &FourierTable, g: f64) -> (f64, f64) {
    let mut l2 = ZERO;
    let mut h1 = ZERO;
    for (q, nq) in idx.iter().enumerate() {
        for (p, np) in idx.iter().enumerate() {
            let uv = u.get(&[nq[0] - np[0], nq[1] - np[1], nq[2] - np[2]]).expect("U table covers the index set");
            let w = c[p].conj() * c[q] * uv;
            l2 += w;
            let kk = (np[0] * nq[0] + np[1] * nq[1] + np[2] * nq[2]) as f64 * g * g;
            h1 += w * kk;
        }
    }
    (l2.re.max(0.0), h1.re.max(0.0))
}

fn max_extent(idx: &[[i64; 3]]) -> i64 {
    idx.iter().flat_map(|n| n.iter().map(|x| x.abs())).max().unwrap_or(0)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Per-axis evaluation of two spline spaces at the Gauss points of their
/// common refinement.
struct CommonAxis {
    points: Vec<f64>,
    weights: Vec<f64>,
    a: Vec<(usize, Vec<f64>, Vec<f64>)>,
    b: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

fn common_axis(ax: &AxisData, bx: &AxisData, order: usize) -> CommonAxis {
    let (na, nb) = (ax.n_elements(), bx.n_elements());
    let nc = na / gcd(na, nb) * nb;
    let (x, w) = gauss_legendre(order);
    let len = ax.length;
    let mut out = CommonAxis {
        points: Vec::new(),
        weights: Vec::new(),
        a: Vec::new(),
        b: Vec::new(),
    };
    for e in 0..nc {
        let lo = ax.lower + len * e as f64 / nc as f64;
        let hi = ax.lower + len * (e + 1) as f64 / nc as f64;
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        for (t, wt) in x.iter().zip(&w) {
            let xp = mid + half * t;
            out.points.push(xp);
            out.weights.push(wt * half);
            out.a.push(ax.local_eval(xp, e * na / nc));
            out.b.push(bx.local_eval(xp, e * nb / nc));
        }
    }
    out
}

/// Norms of a difference of two DG functions.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorNorms {
    pub l2: f64,
    pub h1_in: f64,
    pub h1_out: f64,
    /// `‖[f]‖_{L²(Γ)}`.
    pub jump: f64,
    /// `(‖f‖²_{H¹(in)} + ‖f‖²_{H¹(out)} + σ‖[f]‖²)^{1/2}`.
    pub dg: f64,
}

/// Norms of `wa·a + wb·b`. Both discretizations must share the same
/// decomposition; their spline meshes need not match.
pub fn combination_norms(a: &Orbital<'_>, wa: Complex64, b: &Orbital<'_>, wb: Complex64, sigma: f64) -> ErrorNorms {
    let decomp = &a.disc.decomp;
    let d = decomp.dim();
    let g = decomp.cell.dual_spacing();
    let (idx, c) = union_pw(a, b, wa, wb);
    let ut = u_table(decomp, 2 * max_extent(&idx));
    let (out_l2, out_grad) = out_quadratic(&idx, &c, &ut, g);

    let pa = a.disc.space.degree();
    let pb = b.disc.space.degree();
    let order = pa.max(pb) + 2;
    let mut in_l2 = 0.0;
    let mut in_grad = 0.0;
    let mut jump2 = 0.0;
    for patch in 0..decomp.patches.len() {
        let axa = a.disc.axis_data(patch);
        let axb = b.disc.axis_data(patch);
        let common: Vec<CommonAxis> = (0..d).map(|s| common_axis(&axa[s], &axb[s], order)).collect();
        let (sa, sb) = (a.disc.space.shape(), b.disc.space.shape());
        let (ca, cb) = (a.spline(patch), b.spline(patch));
        let npts: Vec<usize> = common.iter().map(|c| c.points.len()).collect();
        let total: usize = npts.iter().product();
        let mut la = Vec::with_capacity(d);
        let mut lb = Vec::with_capacity(d);
        for mut f in 0..total {
            la.clear();
            lb.clear();
            let mut w = 1.0;
            for s in 0..d {
                let i = f % npts[s];
                f /= npts[s];
                w *= common[s].weights[i];
                la.push(common[s].a[i].clone());
                lb.push(common[s].b[i].clone());
            }
            let (va, ga) = tensor_value(&sa, ca, &la);
            let (vb, gb) = tensor_value(&sb, cb, &lb);
            in_l2 += w * (wa * va + wb * vb).norm_sqr();
            for s in 0..d {
                in_grad += w * (wa * ga[s] + wb * gb[s]).norm_sqr();
            }
        }

        // interface jump, composite rule along the tangential axes
        let kmax = idx
            .iter()
            .map(|n| g * ((n[0] * n[0] + n[1] * n[1] + n[2] * n[2]) as f64).sqrt())
            .fold(0.0, f64::max);
        for face in decomp.faces_of(patch) {
            let tang: Vec<usize> = face.tangential_axes().collect();
            let h_face = axa[tang[0]].length / common[tang[0]].points.len().max(1) as f64 * order as f64;
            let f_order = order + (kmax * h_face).ceil() as usize;
            let taxes: Vec<CommonAxis> = tang.iter().map(|&t| common_axis(&axa[t], &axb[t], f_order)).collect();
            let side = usize::from(face.side == FaceSide::Upper);
            let na_ax = &axa[face.axis];
            let nb_ax = &axb[face.axis];
            let xn = face.offset();
            let normal_a = na_ax.local_eval(xn, if side == 1 { na_ax.n_elements() - 1 } else { 0 });
            let normal_b = nb_ax.local_eval(xn, if side == 1 { nb_ax.n_elements() - 1 } else { 0 });
            let tn: Vec<usize> = taxes.iter().map(|c| c.points.len()).collect();
            let tt: usize = tn.iter().product();
            for mut f in 0..tt {
                let mut r = [0.0; 3];
                r[face.axis] = xn;
                let mut w = 1.0;
                let mut la: Vec<(usize, Vec<f64>, Vec<f64>)> = vec![(0, Vec::new(), Vec::new()); d];
                let mut lb = la.clone();
                la[face.axis] = normal_a.clone();
                lb[face.axis] = normal_b.clone();
                for (j, &t) in tang.iter().enumerate() {
                    let i = f % tn[j];
                    f /= tn[j];
                    r[t] = taxes[j].points[i];
                    w *= taxes[j].weights[i];
                    la[t] = taxes[j].a[i].clone();
                    lb[t] = taxes[j].b[i].clone();
                }
                let vin = wa * tensor_value(&sa, ca, &la).0 + wb * tensor_value(&sb, cb, &lb).0;
                let vout = pw_value(&idx, &c, &r, g, decomp.cell.volume());
                jump2 += w * (vin - vout).norm_sqr();
            }
        }
    }
    let l2 = (out_l2 + in_l2).sqrt();
    let h1_in = (in_l2 + in_grad).sqrt();
    let h1_out = (out_l2 + out_grad).sqrt();
    let jump = jump2.sqrt();
    ErrorNorms {
        l2,
        h1_in,
        h1_out,
        jump,
        dg: (h1_in * h1_in + h1_out * h1_out + sigma * jump2).sqrt(),
    }
}

fn pw_value(idx: &[[i64; 3]], c: &[Complex64], r: &Point, g: f64, vol: f64) -> Complex64 {
    let mut v = ZERO;
    for (n, cn) in idx.iter().zip(c) {
        v += *cn * Complex64::from_polar(1.0, g * (n[0] as f64 * r[0] + n[1] as f64 * r[1] + n[2] as f64 * r[2]));
    }
    v / vol.sqrt()
}

/// `‖u_ref - u‖` in the L² and DG norms, with `σ` of the approximation.
pub fn error_norms(reference: &Orbital<'_>, approx: &Orbital<'_>) -> ErrorNorms {
    combination_norms(reference, Complex64::new(1.0, 0.0), approx, Complex64::new(-1.0, 0.0), approx.disc.sigma)
}

/// `(a, b)_{L²(Ω)}` for orbitals of possibly different discretizations.
pub fn l2_inner(a: &Orbital<'_>, b: &Orbital<'_>) -> Complex64 {
    // polarization of the squared norm
    let one = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    let n = |wb: Complex64| combination_norms(a, one, b, wb, 0.0).l2.powi(2);
    let re = 0.25 * (n(one) - n(-one));
    let im = 0.25 * (n(-i) - n(i));
    Complex64::new(re, im)
}

/// Unitary `Q` maximizing `Re tr(Q† C)` for a cross-Gram `C`, i.e. the
/// polar factor of `C`. For one column this is the phase of the overlap.
pub fn procrustes(c: &Mat<Complex64>) -> Mat<Complex64> {
    let svd = c.svd().expect("small SVD");
    let mut q = Mat::<Complex64>::zeros(c.nrows(), c.ncols());
    faer::linalg::matmul::matmul(
        q.as_mut(),
        faer::Accum::Replace,
        svd.U(),
        svd.V().adjoint(),
        Complex64::new(1.0, 0.0),
        faer::Par::Seq,
    );
    q
}

/// Rotates the approximate cluster onto the reference cluster and returns
/// the aligned coefficient vectors of the approximation.
pub fn align_cluster(reference: &[Orbital<'_>], approx: &[Orbital<'_>]) -> Vec<Vec<Complex64>> {
    let k = reference.len();
    assert_eq!(k, approx.len());
    let c = Mat::from_fn(k, k, |i, j| l2_inner(&approx[i], &reference[j]));
    let q = procrustes(&c);
    (0..k)
        .map(|j| {
            let n = approx[0].coeffs.len();
            (0..n).map(|r| (0..k).map(|i| approx[i].coeffs[r] * q[(i, j)]).sum()).collect()
        })
        .collect()
}

/// `occ · |u_out|²` as a trigonometric polynomial of extent `2K`.
pub fn density_out(orb: &Orbital<'_>, occ: f64) -> FourierSeries {
    let disc = orb.disc;
    let ext = 2 * disc.waves.cutoff as i64;
    let mut out = FourierSeries::zeros(disc.decomp.cell, ext);
    let vol = disc.decomp.cell.volume();
    let c = orb.pw();
    for (p, np) in disc.waves.indices.iter().enumerate() {
        let cp = c[p].conj() * (occ / vol);
        for (q, nq) in disc.waves.indices.iter().enumerate() {
            let m = [nq[0] - np[0], nq[1] - np[1], nq[2] - np[2]];
            let i = out.flat_of(&m).expect("difference within 2K");
            out.coeffs[i] += cp * c[q];
        }
    }
    out
}

/// `occ · |u_in|²` inside the patches, usable as a potential field. Points
/// outside every patch see the plane-wave side.
pub struct DensityField<'a> {
    pub orbital: Orbital<'a>,
    pub occupation: f64,
}

impl PotentialField for DensityField<'_> {
    fn dim(&self) -> usize {
        self.orbital.disc.decomp.dim()
    }

    fn smooth_grid(&self, axes: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; axes.iter().map(Vec::len).product()];
        crate::potentials::for_each_grid_point(axes, |flat, r| {
            out[flat] = self.occupation * self.orbital.eval(r).norm_sqr();
        });
        out
    }
}

/// Per-axis matrix `B(m, j) = ∫_{c-R}^{c+R} e^{i g (j·shift - m) x} dx`, used to
/// restrict trigonometric polynomials to a patch.
fn box_matrix(g: f64, center: f64, half: f64, rows: i64, cols: i64, sign: f64) -> AxisMatrix {
    AxisMatrix::from_fn((2 * rows + 1) as usize, (2 * cols + 1) as usize, |i, j| {
        let m = i as i64 - rows;
        let mm = j as i64 - cols;
        box_integral_1d(g * (mm as f64 + sign * m as f64), center, half)
    })
}

/// `(1/|Ω|) ∫_out V e^{i k_n·r}` for a trigonometric polynomial `V` and
/// `|n_s| ≤ extent`, exact.
pub fn v_out_trig(series: &FourierSeries, decomp: &DomainDecomposition, extent: i64) -> FourierTable {
    let d = decomp.dim();
    let g = decomp.cell.dual_spacing();
    let vol = decomp.cell.volume();
    let mut table = FourierTable::zeros(d, extent);
    for i in 0..table.values.len() {
        let n = table.index_of(i);
        table.values[i] = series.coeff(&[-n[0], -n[1], -n[2]]);
    }
    let shape = series.shape();
    for p in &decomp.patches {
        let mats: Vec<AxisMatrix> = (0..d).map(|s| box_matrix(g, p.center[s], p.half_width, extent, series.extent[s], 1.0)).collect();
        let refs: Vec<&AxisMatrix> = mats.iter().collect();
        let inner = contract(&series.coeffs, &shape, &refs);
        for (t, v) in table.values.iter_mut().zip(&inner) {
            *t -= v / vol;
        }
    }
    table
}

/// Full-cell Fourier coefficients `(1/|Ω|) ∫_Ω occ|u|² e^{-i k_m·r}` for
/// `|m_s| ≤ extent`: exact on the interstitial, Gauss quadrature on the
/// patch elements.
pub fn density_coefficients(orb: &Orbital<'_>, occ: f64, extent: i64) -> FourierSeries {
    let disc = orb.disc;
    let decomp = &disc.decomp;
    let d = decomp.dim();
    let g = decomp.cell.dual_spacing();
    let vol = decomp.cell.volume();
    let rho_out = density_out(orb, occ);
    let mut out = FourierSeries::zeros(decomp.cell, extent);
    for i in 0..out.coeffs.len() {
        let m = out.index_of(i);
        out.coeffs[i] = rho_out.coeff(&m);
    }
    let shape = rho_out.shape();
    let p = disc.space.degree();
    for (j, patch) in decomp.patches.iter().enumerate() {
        // remove the patch part of the interstitial polynomial
        let mats: Vec<AxisMatrix> = (0..d).map(|s| box_matrix(g, patch.center[s], patch.half_width, extent, rho_out.extent[s], -1.0)).collect();
        let refs: Vec<&AxisMatrix> = mats.iter().collect();
        let inner = contract(&rho_out.coeffs, &shape, &refs);
        for (o, v) in out.coeffs.iter_mut().zip(&inner) {
            *o -= v / vol;
        }
        // spline density on the patch
        let axes = disc.axis_data(j);
        let h = axes[0].length / axes[0].n_elements() as f64;
        let order = 2 * p + 2 + (g * extent as f64 * h).ceil() as usize;
        let rules: Vec<Vec<crate::assembly::ElementRule1d>> =
            axes.iter().map(|a| (0..a.n_elements()).map(|e| a.element_rule(e, order)).collect()).collect();
        let pts: Vec<Vec<f64>> = rules.iter().map(|rs| rs.iter().flat_map(|r| r.points.iter().copied()).collect()).collect();
        let wts: Vec<Vec<f64>> = rules.iter().map(|rs| rs.iter().flat_map(|r| r.weights.iter().copied()).collect()).collect();
        let vals = spline_density_grid(orb, j, &axes, &pts, occ);
        let emats: Vec<AxisMatrix> = (0..d)
            .map(|s| {
                AxisMatrix::from_fn((2 * extent + 1) as usize, pts[s].len(), |mi, x| {
                    let m = mi as i64 - extent;
                    Complex64::from_polar(wts[s][x], -g * m as f64 * pts[s][x])
                })
            })
            .collect();
        let erefs: Vec<&AxisMatrix> = emats.iter().collect();
        let vals_c: Vec<Complex64> = vals.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let pshape: Vec<usize> = pts.iter().map(Vec::len).collect();
        let coef = contract(&vals_c, &pshape, &erefs);
        for (o, v) in out.coeffs.iter_mut().zip(&coef) {
            *o += v / vol;
        }
    }
    out
}

/// `occ|u_in|²` of one patch on a tensor grid of interior points.
fn spline_density_grid(orb: &Orbital<'_>, patch: usize, axes: &[AxisData], pts: &[Vec<f64>], occ: f64) -> Vec<f64> {
    let d = axes.len();
    let shape = orb.disc.space.shape();
    let coeffs = orb.spline(patch);
    let local: Vec<Vec<(usize, Vec<f64>, Vec<f64>)>> = (0..d)
        .map(|s| {
            pts[s]
                .iter()
                .map(|&x| {
                    let xi = ((x - axes[s].lower) / axes[s].length).clamp(0.0, 1.0);
                    axes[s].local_eval(x, axes[s].kv.element_of(xi))
                })
                .collect()
        })
        .collect();
    let n: Vec<usize> = pts.iter().map(Vec::len).collect();
    let total: usize = n.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut l = Vec::with_capacity(d);
    for mut f in 0..total {
        l.clear();
        for s in 0..d {
            l.push(local[s][f % n[s]].clone());
            f /= n[s];
        }
        out.push(occ * tensor_value(&shape, coeffs, &l).0.norm_sqr());
    }
    out
}

/// `∫_Ω f²` for a real field given as interstitial trigonometric
/// polynomial plus per-patch pointwise values.
pub fn density_l2_squared(a: &Orbital<'_>, b: Option<&Orbital<'_>>, occ: f64) -> f64 {
    // interstitial polynomial of the difference
    let disc = a.disc;
    let decomp = &disc.decomp;
    let d = decomp.dim();
    let vol = decomp.cell.volume();
    let mut ro = density_out(a, occ);
    if let Some(b) = b {
        let rb = density_out(b, occ);
        for (x, y) in ro.coeffs.iter_mut().zip(&rb.coeffs) {
            *x -= y;
        }
    }
    let full: f64 = ro.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>() * vol;
    let g = decomp.cell.dual_spacing();
    let kmax = g * ro.extent[0] as f64 * (d as f64).sqrt();
    let p = disc.space.degree();
    let mut patch_part = 0.0;
    let mut inner = 0.0;
    for (j, patch) in decomp.patches.iter().enumerate() {
        // interstitial polynomial squared over the patch box
        let order = 12 + (kmax * patch.half_width).ceil() as usize;
        let (x, w) = gauss_legendre(order);
        let pts: Vec<Vec<f64>> = (0..d).map(|s| x.iter().map(|t| patch.center[s] + patch.half_width * t).collect()).collect();
        let vals = ro.eval_grid(&pts);
        for (f, v) in vals.iter().enumerate() {
            let mut wt = 1.0;
            let mut ff = f;
            for _ in 0..d {
                wt *= w[ff % order] * patch.half_width;
                ff /= order;
            }
            patch_part += wt * v * v;
        }
        // spline densities
        let axes = disc.axis_data(j);
        let order = 2 * p + 2;
        let rules: Vec<Vec<crate::assembly::ElementRule1d>> =
            axes.iter().map(|ax| (0..ax.n_elements()).map(|e| ax.element_rule(e, order)).collect()).collect();
        let pts: Vec<Vec<f64>> = rules.iter().map(|rs| rs.iter().flat_map(|r| r.points.iter().copied()).collect()).collect();
        let wts: Vec<Vec<f64>> = rules.iter().map(|rs| rs.iter().flat_map(|r| r.weights.iter().copied()).collect()).collect();
        let va = spline_density_grid(a, j, &axes, &pts, occ);
        let vb = b.map(|b| spline_density_grid(b, j, &axes, &pts, occ));
        let n: Vec<usize> = pts.iter().map(Vec::len).collect();
        for (f, v) in va.iter().enumerate() {
            let mut wt = 1.0;
            let mut ff = f;
            for s in 0..d {
                wt *= wts[s][ff % n[s]];
                ff /= n[s];
            }
            let diff = v - vb.as_ref().map_or(0.0, |x| x[f]);
            inner += wt * diff * diff;
        }
    }
    (full - patch_part).max(0.0) + inner
}
