//! Block assembly of the interior-penalty Hamiltonian
//! `H = [[H^a, H^c], [H^c†, H^b]]` and the overlap `M = diag(M^a, M^b)`.
//!
//! Degrees of freedom are ordered plane waves first, then the splines of
//! each patch. The plane-wave blocks are dense, the spline blocks share one
//! banded sparsity pattern, and the coupling is a dense panel over the
//! spline functions whose value or normal derivative is nonzero on Γ.

use std::sync::Arc;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatMut, MatRef, Par};
use num_complex::Complex64;

use crate::bspline::{GeometryMap, KnotVector, SplineSpace};
use crate::error::{Error, Result};
use crate::fftcheb::FourierTable;
use crate::geometry::{gauss_legendre, DomainDecomposition, FaceSide, Point};
use crate::planewave::{box_integral_1d, build_wavevectors, geometric_factor_u, WaveVectorSet};
use crate::potentials::PotentialField;
use crate::sparse::{Csr, Pattern};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// `σ = C_σ (K + 1/h)`.
pub fn penalty_sigma(c_sigma: f64, cutoff: usize, h: f64) -> Result<f64> {
    if !(c_sigma > 0.0) || !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("need C_σ > 0 and h > 0, got {c_sigma}, {h}")));
    }
    Ok(c_sigma * (cutoff as f64 + 1.0 / h))
}

/// Global numbering: plane waves, then patch 0 splines, patch 1 splines, ...
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DofMap {
    pub n_pw: usize,
    pub n_spline_patch: usize,
    pub n_patches: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dof {
    PlaneWave(usize),
    Spline { patch: usize, local: usize },
}

impl DofMap {
    pub fn n_spline(&self) -> usize {
        self.n_spline_patch * self.n_patches
    }

    pub fn total(&self) -> usize {
        self.n_pw + self.n_spline()
    }

    pub fn spline_offset(&self, patch: usize) -> usize {
        self.n_pw + patch * self.n_spline_patch
    }

    pub fn locate(&self, i: usize) -> Option<Dof> {
        if i < self.n_pw {
            Some(Dof::PlaneWave(i))
        } else if i < self.total() {
            let j = i - self.n_pw;
            Some(Dof::Spline {
                patch: j / self.n_spline_patch,
                local: j % self.n_spline_patch,
            })
        } else {
            None
        }
    }

    pub fn global(&self, dof: Dof) -> usize {
        match dof {
            Dof::PlaneWave(i) => i,
            Dof::Spline { patch, local } => self.spline_offset(patch) + local,
        }
    }
}

/// Quadrature settings of the spline potential integrals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureOptions {
    /// Gauss points per axis per element beyond `p` for smooth integrands.
    pub smooth_extra: usize,
    /// Target accuracy of the near-singular tensor rules.
    pub singular_tol: f64,
    /// Radial and lateral orders beyond `p` of the pyramid rules on elements
    /// that contain a singular point.
    pub radial_extra: usize,
    pub lateral_extra: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            smooth_extra: 6,
            singular_tol: 1e-13,
            radial_extra: 8,
            lateral_extra: 14,
        }
    }
}

/// Plane waves, splines, and penalty of one discretization.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub decomp: DomainDecomposition,
    pub waves: WaveVectorSet,
    pub space: SplineSpace,
    pub maps: Vec<GeometryMap>,
    pub c_sigma: f64,
    pub sigma: f64,
    pub dofs: DofMap,
    pub quadrature: QuadratureOptions,
}

impl Discretization {
    pub fn new(decomp: DomainDecomposition, cutoff: usize, degree: usize, n_elem: usize, c_sigma: f64) -> Result<Self> {
        if degree < 1 || n_elem < 1 {
            return Err(Error::InvalidParameter("spline degree and element count must be positive".into()));
        }
        if decomp.patches.is_empty() {
            return Err(Error::Geometry("at least one atomic patch is required".into()));
        }
        let d = decomp.dim();
        let waves = build_wavevectors(cutoff, decomp.cell);
        let space = SplineSpace::uniform(degree, n_elem, d);
        let maps = decomp.patches.iter().map(|p| GeometryMap::for_patch(p, d)).collect();
        let h = decomp.patches.iter().map(|p| p.side()).fold(0.0, f64::max) / n_elem as f64;
        let sigma = penalty_sigma(c_sigma, cutoff, h)?;
        let dofs = DofMap {
            n_pw: waves.len(),
            n_spline_patch: space.n_dofs(),
            n_patches: decomp.patches.len(),
        };
        Ok(Self {
            decomp,
            waves,
            space,
            maps,
            c_sigma,
            sigma,
            dofs,
            quadrature: QuadratureOptions::default(),
        })
    }

    /// Physical element size.
    pub fn mesh_size(&self) -> f64 {
        self.maps.iter().map(|m| m.scale).fold(0.0, f64::max) * self.space.axes[0].mesh_size()
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn axis_data(&self, patch: usize) -> Vec<AxisData> {
        let m = &self.maps[patch];
        (0..self.decomp.dim())
            .map(|s| AxisData::new(self.space.axes[s].clone(), m.lower[s], m.scale))
            .collect()
    }
}

/// One spline axis of a patch in physical coordinates.
#[derive(Clone, Debug)]
pub struct AxisData {
    pub kv: KnotVector,
    pub lower: f64,
    pub length: f64,
    /// `∫ B_i B_j dx`, row-major `n × n`.
    pub mass: Vec<f64>,
    /// `∫ B_i' B_j' dx`.
    pub stiff: Vec<f64>,
    /// Values at the lower and upper end.
    pub end_val: [Vec<f64>; 2],
    /// Physical derivatives at the lower and upper end.
    pub end_der: [Vec<f64>; 2],
}

/// Basis functions of one element at its Gauss points.
#[derive(Clone, Debug)]
pub struct ElementRule1d {
    pub first: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    /// `vals[g][l]` for local function `l`.
    pub vals: Vec<Vec<f64>>,
    pub ders: Vec<Vec<f64>>,
}

impl AxisData {
    pub fn new(kv: KnotVector, lower: f64, length: f64) -> Self {
        let n = kv.len();
        let p = kv.degree;
        let mut mass = vec![0.0; n * n];
        let mut stiff = vec![0.0; n * n];
        let mut axis = Self {
            kv,
            lower,
            length,
            mass: Vec::new(),
            stiff: Vec::new(),
            end_val: [vec![0.0; n], vec![0.0; n]],
            end_der: [vec![0.0; n], vec![0.0; n]],
        };
        for e in 0..axis.n_elements() {
            let r = axis.element_rule(e, p + 1);
            for g in 0..r.points.len() {
                for a in 0..=p {
                    for b in 0..=p {
                        let (i, j) = (r.first + a, r.first + b);
                        mass[i * n + j] += r.weights[g] * r.vals[g][a] * r.vals[g][b];
                        stiff[i * n + j] += r.weights[g] * r.ders[g][a] * r.ders[g][b];
                    }
                }
            }
        }
        axis.mass = mass;
        axis.stiff = stiff;
        for (side, xi) in [0.0, 1.0].into_iter().enumerate() {
            let (first, d) = axis.kv.eval_ders(xi, 1).expect("endpoint is in the domain");
            for l in 0..=p {
                axis.end_val[side][first + l] = d[0][l];
                axis.end_der[side][first + l] = d[1][l] / length;
            }
        }
        axis
    }

    pub fn len(&self) -> usize {
        self.kv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kv.is_empty()
    }

    pub fn n_elements(&self) -> usize {
        self.kv.n_elements()
    }

    /// Physical interval of element `e`.
    pub fn element_bounds(&self, e: usize) -> (f64, f64) {
        let bp = self.kv.breakpoints();
        (self.lower + self.length * bp[e], self.lower + self.length * bp[e + 1])
    }

    pub fn upper(&self) -> f64 {
        self.lower + self.length
    }

    pub fn element_rule(&self, e: usize, order: usize) -> ElementRule1d {
        let (a, b) = self.element_bounds(e);
        let (x, w) = gauss_legendre(order);
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        let mut rule = ElementRule1d {
            first: 0,
            points: Vec::with_capacity(order),
            weights: Vec::with_capacity(order),
            vals: Vec::with_capacity(order),
            ders: Vec::with_capacity(order),
        };
        for (t, wt) in x.iter().zip(&w) {
            let xp = mid + half * t;
            let (first, v, dv) = self.local_eval(xp, e);
            rule.first = first;
            rule.points.push(xp);
            rule.weights.push(wt * half);
            rule.vals.push(v);
            rule.ders.push(dv);
        }
        rule
    }

    /// Values and physical derivatives of the `p + 1` functions active on
    /// element `e` at a physical point of that element.
    pub fn local_eval(&self, x: f64, e: usize) -> (usize, Vec<f64>, Vec<f64>) {
        let bp = self.kv.breakpoints();
        let xi = ((x - self.lower) / self.length).clamp(bp[e], bp[e + 1]);
        // nudge off the right boundary so the span is the element's own
        let xi = if xi >= bp[e + 1] && e + 1 < bp.len() - 1 {
            bp[e + 1] - 1e-15 * (bp[e + 1] - bp[e])
        } else {
            xi
        };
        let (first, d) = self.kv.eval_ders(xi, 1).expect("clamped into the domain");
        let dv = d[1].iter().map(|v| v / self.length).collect();
        let mut it = d.into_iter();
        (first, it.next().unwrap(), dv)
    }

    /// `F(k, i) = ∫ B_i(x) e^{-ikx} dx` for every `k`, row-major `ks.len() × n`.
    pub fn fourier(&self, ks: &[f64]) -> Vec<Complex64> {
        let n = self.len();
        let p = self.kv.degree;
        let kmax = ks.iter().fold(0.0f64, |a, k| a.max(k.abs()));
        let h = self.length * self.kv.mesh_size();
        let order = p + 8 + (kmax * h).ceil() as usize;
        let mut out = vec![ZERO; ks.len() * n];
        for e in 0..self.n_elements() {
            let r = self.element_rule(e, order);
            for (a, &k) in ks.iter().enumerate() {
                for g in 0..r.points.len() {
                    let ph = Complex64::from_polar(r.weights[g], -k * r.points[g]);
                    for l in 0..=p {
                        out[a * n + r.first + l] += ph * r.vals[g][l];
                    }
                }
            }
        }
        out
    }
}

/// Banded tensor pattern: `j` is a column of row `i` when `|i_s - j_s| ≤ p`
/// along every axis.
pub fn tensor_band_pattern(space: &SplineSpace) -> Pattern {
    let n = space.n_dofs();
    let d = space.dim();
    let p = space.degree() as i64;
    let shape = space.shape();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mi = space.multi_index(i);
        let mut cols = Vec::new();
        let span = (2 * p + 1) as usize;
        let total = span.pow(d as u32);
        'outer: for mut f in 0..total {
            let mut mj = [0usize; 3];
            for s in 0..d {
                let off = (f % span) as i64 - p;
                f /= span;
                let j = mi[s] as i64 + off;
                if j < 0 || j >= shape[s] as i64 {
                    continue 'outer;
                }
                mj[s] = j as usize;
            }
            cols.push(space.flat_index(&mj[..d]));
        }
        rows.push(cols);
    }
    Pattern::from_rows(rows)
}

/// Sparse blocks of one patch.
#[derive(Clone, Debug)]
pub struct SplineBlock {
    pub h: Csr,
    pub m: Csr,
    /// `∫ ∇χ_i · ∇χ_j`.
    pub stiff: Csr,
    /// σ-scaled face mass.
    pub penalty: Csr,
}

fn kron_entry(axes: &[AxisData], mi: &[usize], mj: &[usize], skip: Option<usize>, stiff_axis: Option<usize>) -> f64 {
    let mut v = 1.0;
    for (s, ax) in axes.iter().enumerate() {
        if Some(s) == skip {
            continue;
        }
        let n = ax.len();
        let m = if Some(s) == stiff_axis { &ax.stiff } else { &ax.mass };
        v *= m[mi[s] * n + mj[s]];
        if v == 0.0 {
            return 0.0;
        }
    }
    v
}

/// Spline mass, stiffness, and interface terms of patch `patch`, without
/// the potential.
pub fn spline_structure(disc: &Discretization, patch: usize, pattern: Arc<Pattern>) -> SplineBlock {
    let axes = disc.axis_data(patch);
    let space = &disc.space;
    let d = space.dim();
    let mut h = Csr::zeros(pattern.clone());
    let mut m = Csr::zeros(pattern.clone());
    let mut pen = Csr::zeros(pattern.clone());
    let mut st = Csr::zeros(pattern.clone());
    let sigma = disc.sigma;
    for i in 0..pattern.n {
        let mi = space.multi_index(i);
        for k in pattern.row_ptr[i]..pattern.row_ptr[i + 1] {
            let j = pattern.cols[k];
            let mj = space.multi_index(j);
            m.vals[k] = kron_entry(&axes, &mi, &mj, None, None);
            let mut stiff = 0.0;
            for a in 0..d {
                stiff += kron_entry(&axes, &mi, &mj, None, Some(a));
            }
            st.vals[k] = stiff;
            let mut hv = 0.5 * stiff;
            let mut pv = 0.0;
            for face in disc.decomp.faces_of(patch) {
                let a = face.axis;
                let side = match face.side {
                    FaceSide::Lower => 0,
                    FaceSide::Upper => 1,
                };
                let sg = face.side.sign();
                let ax = &axes[a];
                let (vi, vj) = (ax.end_val[side][mi[a]], ax.end_val[side][mj[a]]);
                let (di, dj) = (sg * ax.end_der[side][mi[a]], sg * ax.end_der[side][mj[a]]);
                if vi == 0.0 && vj == 0.0 {
                    continue;
                }
                let tang = kron_entry(&axes, &mi, &mj, Some(a), None);
                hv += -0.25 * (dj * vi + di * vj) * tang;
                pv += sigma * vi * vj * tang;
            }
            h.vals[k] = hv + pv;
            pen.vals[k] = pv;
        }
    }
    SplineBlock { h, m, stiff: st, penalty: pen }
}

/// Distance from a point to an axis-aligned box.
fn box_distance(r: &Point, lo: &[f64; 3], hi: &[f64; 3], d: usize) -> f64 {
    let mut acc = 0.0;
    for s in 0..d {
        let t = if r[s] < lo[s] {
            lo[s] - r[s]
        } else if r[s] > hi[s] {
            r[s] - hi[s]
        } else {
            0.0
        };
        acc += t * t;
    }
    acc.sqrt()
}

/// Gauss order that integrates a function with a point singularity at
/// distance `dist` from an element of half-width `half` to `tol`.
fn near_singular_order(dist: f64, half: f64, tol: f64, p: usize) -> usize {
    let a = 1.0 + dist / half;
    let rho = a + (a * a - 1.0).sqrt();
    let q = ((1.0 / tol).ln() / (2.0 * rho.ln())).ceil();
    if q.is_finite() && q < 64.0 {
        (q as usize + p + 1).min(64)
    } else {
        64
    }
}

fn add_local(local: &mut [f64], phi: &[f64], wv: f64) {
    let nl = phi.len();
    for a in 0..nl {
        let fa = wv * phi[a];
        if fa == 0.0 {
            continue;
        }
        let row = &mut local[a * nl..(a + 1) * nl];
        for (b, pb) in phi.iter().enumerate() {
            row[b] += fa * pb;
        }
    }
}

/// Tensor products of the per-axis local values, first axis fastest.
fn tensor_phi(vals: &[&[f64]], out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    for v in vals {
        let prev = std::mem::take(out);
        for &b in v.iter() {
            for &a in &prev {
                out.push(a * b);
            }
        }
    }
}

/// `∫ V χ_i χ_j` over one patch.
pub fn potential_mass(disc: &Discretization, patch: usize, field: &dyn PotentialField, pattern: Arc<Pattern>) -> Csr {
    let axes = disc.axis_data(patch);
    let space = &disc.space;
    let d = space.dim();
    let p = space.degree();
    let opts = disc.quadrature;
    let q_s = p + opts.smooth_extra;
    let ne: Vec<usize> = axes.iter().map(|a| a.n_elements()).collect();
    let rules: Vec<Vec<ElementRule1d>> = axes
        .iter()
        .map(|a| (0..a.n_elements()).map(|e| a.element_rule(e, q_s)).collect())
        .collect();
    let grid: Vec<Vec<f64>> = rules.iter().map(|rs| rs.iter().flat_map(|r| r.points.iter().copied()).collect()).collect();
    let gshape: Vec<usize> = grid.iter().map(Vec::len).collect();
    let smooth = field.smooth_grid(&grid);
    let rough = !field.is_smooth();
    let sing: Vec<Point> = if rough { field.singular_points() } else { Vec::new() };

    let mut out = Csr::zeros(pattern);
    let nl = (p + 1).pow(d as u32);
    let mut local = vec![0.0; nl * nl];
    let mut phi = Vec::with_capacity(nl);
    let n_el: usize = ne.iter().product();
    for mut ef in 0..n_el {
        let mut e = [0usize; 3];
        for s in 0..d {
            e[s] = ef % ne[s];
            ef /= ne[s];
        }
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for s in 0..d {
            let (a, b) = axes[s].element_bounds(e[s]);
            lo[s] = a;
            hi[s] = b;
        }
        let half = (0..d).map(|s| 0.5 * (hi[s] - lo[s])).fold(0.0, f64::max);
        let (dist, nearest) = sing
            .iter()
            .map(|c| (box_distance(c, &lo, &hi, d), *c))
            .fold((f64::INFINITY, [0.0; 3]), |acc, x| if x.0 < acc.0 { x } else { acc });
        let q_need = if rough && dist.is_finite() {
            near_singular_order(dist, half, opts.singular_tol, p)
        } else {
            0
        };
        let near = rough && q_need > q_s;
        local.iter_mut().for_each(|v| *v = 0.0);

        // tensor grid part: smooth always, rough when the element is far
        let mut gi = [0usize; 3];
        let total = q_s.pow(d as u32);
        for mut gf in 0..total {
            let mut r = [0.0; 3];
            let mut w = 1.0;
            let mut flat = 0;
            let mut stride = 1;
            let mut vals: [&[f64]; 3] = [&[], &[], &[]];
            for s in 0..d {
                gi[s] = gf % q_s;
                gf /= q_s;
                let rule = &rules[s][e[s]];
                r[s] = rule.points[gi[s]];
                w *= rule.weights[gi[s]];
                flat += (e[s] * q_s + gi[s]) * stride;
                stride *= gshape[s];
                vals[s] = &rule.vals[gi[s]];
            }
            let mut v = smooth[flat];
            if rough && !near {
                v += field.rough(&r);
            }
            tensor_phi(&vals[..d], &mut phi);
            add_local(&mut local, &phi, w * v);
        }

        if near {
            if dist <= 1e-12 * half {
                pyramid_rule(&axes, &e, &lo, &hi, &nearest, d, p + opts.radial_extra, p + opts.lateral_extra, |r, w, vals| {
                    tensor_phi(vals, &mut phi);
                    add_local(&mut local, &phi, w * field.rough(r));
                });
            } else {
                let rs: Vec<ElementRule1d> = (0..d).map(|s| axes[s].element_rule(e[s], q_need)).collect();
                let total = q_need.pow(d as u32);
                for mut gf in 0..total {
                    let mut r = [0.0; 3];
                    let mut w = 1.0;
                    let mut vals: [&[f64]; 3] = [&[], &[], &[]];
                    for s in 0..d {
                        let g = gf % q_need;
                        gf /= q_need;
                        r[s] = rs[s].points[g];
                        w *= rs[s].weights[g];
                        vals[s] = &rs[s].vals[g];
                    }
                    tensor_phi(&vals[..d], &mut phi);
                    add_local(&mut local, &phi, w * field.rough(&r));
                }
            }
        }

        // scatter, local index first axis fastest with global first = element index
        let first: Vec<usize> = (0..d).map(|s| rules[s][e[s]].first).collect();
        let mut ga = vec![0usize; nl];
        for (a, slot) in ga.iter_mut().enumerate() {
            let mut f = a;
            let mut mi = [0usize; 3];
            for s in 0..d {
                mi[s] = first[s] + f % (p + 1);
                f /= p + 1;
            }
            *slot = space.flat_index(&mi[..d]);
        }
        for a in 0..nl {
            for b in 0..nl {
                let v = local[a * nl + b];
                if v != 0.0 {
                    out.add(ga[a], ga[b], v);
                }
            }
        }
    }
    out
}

/// Splits the element into pyramids with apex `apex` over every face not
/// containing it, and calls `f(point, weight, per-axis local values)`.
#[allow(clippy::too_many_arguments)]
fn pyramid_rule(
    axes: &[AxisData],
    e: &[usize; 3],
    lo: &[f64; 3],
    hi: &[f64; 3],
    apex: &Point,
    d: usize,
    q_t: usize,
    q_f: usize,
    mut f: impl FnMut(&Point, f64, &[&[f64]]),
) {
    let (xt, wt) = gauss_legendre(q_t);
    let (xf, wf) = gauss_legendre(q_f);
    let mut store: Vec<Vec<f64>> = vec![Vec::new(); d];
    for a in 0..d {
        for plane in [lo[a], hi[a]] {
            let height = (plane - apex[a]).abs();
            if height <= 1e-12 * (hi[a] - lo[a]) {
                continue;
            }
            let tang: Vec<usize> = (0..d).filter(|&s| s != a).collect();
            let nf = q_f.pow(tang.len() as u32);
            for mut ff in 0..nf {
                let mut base = [0.0; 3];
                base[a] = plane;
                let mut wface = 1.0;
                for &s in &tang {
                    let g = ff % q_f;
                    ff /= q_f;
                    let half = 0.5 * (hi[s] - lo[s]);
                    base[s] = 0.5 * (hi[s] + lo[s]) + half * xf[g];
                    wface *= wf[g] * half;
                }
                for (t, w_t) in xt.iter().zip(&wt) {
                    let tt = 0.5 * (t + 1.0);
                    let mut r = [0.0; 3];
                    for s in 0..d {
                        r[s] = apex[s] + tt * (base[s] - apex[s]);
                    }
                    let w = 0.5 * w_t * wface * height * tt.powi(d as i32 - 1);
                    for s in 0..d {
                        store[s] = axes[s].local_eval(r[s], e[s]).1;
                    }
                    let vals: Vec<&[f64]> = store.iter().map(|v| v.as_slice()).collect();
                    f(&r, w, &vals);
                }
            }
        }
    }
}

/// `U`, `V_out`, and face tables over the offsets `|Δn_s| ≤ 2K`.
#[derive(Clone, Debug)]
pub struct PwTables {
    pub u: FourierTable,
    pub v_out: FourierTable,
    /// `(1/|Ω|) ∫_Γ e^{iΔk·r} ds`.
    pub face: FourierTable,
    /// `(1/|Ω|) ∫_Γ (Δk·n⁺) e^{iΔk·r} ds`.
    pub face_flux: FourierTable,
}

/// Closed-form face integrals for every table offset.
pub fn pw_tables(decomp: &DomainDecomposition, extent: i64, v_out: FourierTable) -> Result<PwTables> {
    let d = decomp.dim();
    if v_out.extent < extent || v_out.dim != d {
        return Err(Error::MissingEntry(vec![extent]));
    }
    let g = decomp.cell.dual_spacing();
    let vol = decomp.cell.volume();
    let mut u = FourierTable::zeros(d, extent);
    let mut face = FourierTable::zeros(d, extent);
    let mut flux = FourierTable::zeros(d, extent);
    let mut vo = FourierTable::zeros(d, extent);
    for i in 0..u.values.len() {
        let n = u.index_of(i);
        let dk = [g * n[0] as f64, g * n[1] as f64, g * n[2] as f64];
        u.values[i] = geometric_factor_u(&dk, decomp);
        vo.values[i] = v_out.get(&n)?;
        let mut fa = ZERO;
        let mut fl = ZERO;
        for f in &decomp.faces {
            let p = &decomp.patches[f.patch];
            let mut term = Complex64::from_polar(1.0, dk[f.axis] * f.offset());
            for t in f.tangential_axes() {
                term *= box_integral_1d(dk[t], p.center[t], p.half_width);
            }
            fa += term;
            fl += term * (dk[f.axis] * f.side.sign());
        }
        face.values[i] = fa / vol;
        flux.values[i] = fl / vol;
    }
    Ok(PwTables {
        u,
        v_out: vo,
        face,
        face_flux: flux,
    })
}

/// Dense plane-wave blocks `(H^a, M^a)`; the penalty part is `σ · face`.
pub fn assemble_pw_block(waves: &WaveVectorSet, tables: &PwTables, sigma: f64) -> Result<(Mat<Complex64>, Mat<Complex64>)> {
    let n = waves.len();
    let mut h = Mat::<Complex64>::zeros(n, n);
    let mut m = Mat::<Complex64>::zeros(n, n);
    let iu = Complex64::new(0.0, 0.25);
    for q in 0..n {
        let nq = waves.indices[q];
        let kq = waves.vectors[q];
        for p in 0..n {
            let np = waves.indices[p];
            let kp = waves.vectors[p];
            let dn = [nq[0] - np[0], nq[1] - np[1], nq[2] - np[2]];
            let idx = tables.u.flat_of(&dn).ok_or_else(|| Error::MissingEntry(dn.to_vec()))?;
            let u = tables.u.values[idx];
            let kk = kp[0] * kq[0] + kp[1] * kq[1] + kp[2] * kq[2];
            h[(p, q)] = u * (0.5 * kk) + tables.v_out.values[idx] + iu * tables.face_flux.values[idx] + tables.face.values[idx] * sigma;
            m[(p, q)] = u;
        }
    }
    Ok((h, m))
}

/// Coupling panel `H^c` and its penalty part over the spline functions
/// (global spline numbering) whose value or normal derivative is nonzero
/// on the interface.
pub struct CouplingBlock {
    pub h: Mat<Complex64>,
    pub penalty: Mat<Complex64>,
    pub cols: Vec<usize>,
}

pub fn assemble_coupling(disc: &Discretization) -> CouplingBlock {
    let d = disc.decomp.dim();
    let space = &disc.space;
    let waves = &disc.waves;
    let k = waves.cutoff as i64;
    let g = disc.decomp.cell.dual_spacing();
    let ks: Vec<f64> = (-k..=k).map(|m| g * m as f64).collect();
    let isv = 1.0 / disc.decomp.cell.volume().sqrt();
    let shape = space.shape();
    let n_spl = space.n_dofs();

    // columns: any axis index in {0, 1, n-2, n-1}
    let touches = |mi: &[usize]| (0..d).any(|s| mi[s] <= 1 || mi[s] + 2 >= shape[s]);
    let mut cols = Vec::new();
    let mut local_cols = Vec::new();
    for patch in 0..disc.dofs.n_patches {
        for j in 0..n_spl {
            if touches(&space.multi_index(j)) {
                cols.push(patch * n_spl + j);
                local_cols.push((patch, j));
            }
        }
    }
    let npw = waves.len();
    let mut h = Mat::<Complex64>::zeros(npw, cols.len());
    let mut pen = Mat::<Complex64>::zeros(npw, cols.len());
    for patch in 0..disc.dofs.n_patches {
        let axes = disc.axis_data(patch);
        let ft: Vec<Vec<Complex64>> = axes.iter().map(|a| a.fourier(&ks)).collect();
        for face in disc.decomp.faces_of(patch) {
            let a = face.axis;
            let side = match face.side {
                FaceSide::Lower => 0,
                FaceSide::Upper => 1,
            };
            let sg = face.side.sign();
            let c = face.offset();
            let ax = &axes[a];
            for (col, &(pp, j)) in local_cols.iter().enumerate() {
                if pp != patch {
                    continue;
                }
                let mj = space.multi_index(j);
                let val = ax.end_val[side][mj[a]];
                let der = sg * ax.end_der[side][mj[a]];
                if val == 0.0 && der == 0.0 {
                    continue;
                }
                for p in 0..npw {
                    let np = waves.indices[p];
                    let kp = waves.vectors[p];
                    let phase = Complex64::from_polar(isv, -kp[a] * c);
                    let mut tang = ONE;
                    for t in 0..d {
                        if t != a {
                            let n1 = shape[t];
                            tang *= ft[t][(np[t] + k) as usize * n1 + mj[t]];
                        }
                    }
                    let base = phase * tang;
                    let consistency = Complex64::new(0.25 * der, 0.25 * sg * kp[a] * val);
                    let penalty = -disc.sigma * val;
                    h[(p, col)] += base * (consistency + penalty);
                    pen[(p, col)] += base * penalty;
                }
            }
        }
    }
    CouplingBlock { h, penalty: pen, cols }
}

/// Metadata of an assembly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SystemInfo {
    pub cutoff: usize,
    pub degree: usize,
    pub mesh_size: f64,
    pub c_sigma: f64,
    pub sigma: f64,
}

/// Assembled Hamiltonian and overlap.
#[derive(Clone, Debug)]
pub struct AssembledSystem {
    pub dofs: DofMap,
    pub info: SystemInfo,
    pub ha: Mat<Complex64>,
    pub ma: Mat<Complex64>,
    /// Spline blocks of all patches, block diagonal, spline numbering.
    pub hb: Csr,
    pub mb: Csr,
    pub hc: Mat<Complex64>,
    /// Spline indices of the columns of `hc`.
    pub hc_cols: Vec<usize>,
    pub penalty: PenaltyPart,
    /// Spline functions with a nonzero trace on Γ, spline numbering.
    pub trace_dofs: Vec<bool>,
}

/// Potential contribution added on top of an assembled system.
#[derive(Clone, Debug)]
pub struct PotentialPart {
    pub table: FourierTable,
    /// Spline potential mass, block diagonal over the patches.
    pub hb: Csr,
}

/// σ-scaled interface mass terms of every block.
#[derive(Clone, Debug)]
pub struct PenaltyPart {
    /// Entry `(p, q)` of the plane-wave part is `face(n_q - n_p)`.
    pub face: FourierTable,
    pub indices: Vec<[i64; 3]>,
    pub b: Csr,
    pub c: Mat<Complex64>,
}

impl PenaltyPart {
    pub fn pw_entry(&self, p: usize, q: usize) -> Complex64 {
        let (a, b) = (self.indices[p], self.indices[q]);
        self.face.get(&[b[0] - a[0], b[1] - a[1], b[2] - a[2]]).unwrap_or(ZERO)
    }
}

/// Full assembly. `field` is the potential seen by the spline block and
/// `v_out` its interstitial Fourier table over offsets up to `2K`.
pub fn assemble(disc: &Discretization, field: &dyn PotentialField, v_out: &FourierTable) -> Result<AssembledSystem> {
    let extent = 2 * disc.waves.cutoff as i64;
    let tables = pw_tables(&disc.decomp, extent, v_out.clone())?;
    let (ha, ma) = assemble_pw_block(&disc.waves, &tables, disc.sigma)?;
    let mut face = tables.face.clone();
    face.values.iter_mut().for_each(|v| *v *= disc.sigma);

    let pattern = Arc::new(tensor_band_pattern(&disc.space));
    let mut hs = Vec::new();
    let mut ms = Vec::new();
    let mut ps = Vec::new();
    for patch in 0..disc.dofs.n_patches {
        let blk = spline_structure(disc, patch, pattern.clone());
        let vm = potential_mass(disc, patch, field, pattern.clone());
        hs.push(blk.h.axpy(1.0, &vm));
        ms.push(blk.m);
        ps.push(blk.penalty);
    }
    let hb = Csr::block_diag(&hs.iter().collect::<Vec<_>>());
    let mb = Csr::block_diag(&ms.iter().collect::<Vec<_>>());
    let pb = Csr::block_diag(&ps.iter().collect::<Vec<_>>());
    let cb = assemble_coupling(disc);
    let shape = disc.space.shape();
    let trace_dofs: Vec<bool> = (0..disc.dofs.n_patches)
        .flat_map(|_| 0..disc.dofs.n_spline_patch)
        .map(|j| {
            let mj = disc.space.multi_index(j);
            (0..mj.len()).any(|s| mj[s] == 0 || mj[s] + 1 == shape[s])
        })
        .collect();
    let sys = AssembledSystem {
        dofs: disc.dofs,
        info: SystemInfo {
            cutoff: disc.waves.cutoff,
            degree: disc.space.degree(),
            mesh_size: disc.mesh_size(),
            c_sigma: disc.c_sigma,
            sigma: disc.sigma,
        },
        ha,
        ma,
        hb,
        mb,
        hc: cb.h,
        hc_cols: cb.cols,
        penalty: PenaltyPart {
            face,
            indices: disc.waves.indices.clone(),
            b: pb,
            c: cb.penalty,
        },
        trace_dofs,
    };
    let defect = sys.hermiticity_defect();
    let scale = sys.max_abs().max(1.0);
    if defect > 1e-12 * scale {
        return Err(Error::NotHermitian(defect));
    }
    Ok(sys)
}

fn gather_rows(x: MatRef<'_, Complex64>, rows: &[usize], offset: usize) -> Mat<Complex64> {
    Mat::from_fn(rows.len(), x.ncols(), |i, j| x[(offset + rows[i], j)])
}

impl AssembledSystem {
    pub fn n(&self) -> usize {
        self.dofs.total()
    }

    pub fn n_pw(&self) -> usize {
        self.dofs.n_pw
    }

    fn apply_blocks(
        &self,
        a: MatRef<'_, Complex64>,
        b: &Csr,
        c: Option<MatRef<'_, Complex64>>,
        x: MatRef<'_, Complex64>,
        mut y: MatMut<'_, Complex64>,
    ) {
        let npw = self.n_pw();
        let n = self.n();
        assert_eq!(x.nrows(), n);
        let m = x.ncols();
        matmul(y.as_mut().subrows_mut(0, npw), Accum::Replace, a, x.subrows(0, npw), ONE, Par::Seq);
        let ns = n - npw;
        for j in 0..m {
            let xs: Vec<Complex64> = (0..ns).map(|i| x[(npw + i, j)]).collect();
            let mut ys = vec![ZERO; ns];
            b.mul_add(&xs, &mut ys);
            for i in 0..ns {
                y[(npw + i, j)] = ys[i];
            }
        }
        if let Some(c) = c {
            let xc = gather_rows(x, &self.hc_cols, npw);
            matmul(y.as_mut().subrows_mut(0, npw), Accum::Add, c, xc.as_ref(), ONE, Par::Seq);
            let mut yc = Mat::<Complex64>::zeros(self.hc_cols.len(), m);
            matmul(yc.as_mut(), Accum::Replace, c.adjoint(), x.subrows(0, npw), ONE, Par::Seq);
            for (r, &col) in self.hc_cols.iter().enumerate() {
                for j in 0..m {
                    y[(npw + col, j)] += yc[(r, j)];
                }
            }
        }
    }

    /// `y = H x` for a block of column vectors.
    pub fn apply_h(&self, x: MatRef<'_, Complex64>, y: MatMut<'_, Complex64>) {
        self.apply_blocks(self.ha.as_ref(), &self.hb, Some(self.hc.as_ref()), x, y);
    }

    /// `y = M x`.
    pub fn apply_m(&self, x: MatRef<'_, Complex64>, y: MatMut<'_, Complex64>) {
        self.apply_blocks(self.ma.as_ref(), &self.mb, None, x, y);
    }

    /// Dense `H`.
    pub fn dense_h(&self) -> Mat<Complex64> {
        let n = self.n();
        let npw = self.n_pw();
        let mut h = Mat::<Complex64>::zeros(n, n);
        h.as_mut().submatrix_mut(0, 0, npw, npw).copy_from(self.ha.as_ref());
        self.fill_spline(&mut h, &self.hb);
        for (r, &col) in self.hc_cols.iter().enumerate() {
            for p in 0..npw {
                let v = self.hc[(p, r)];
                h[(p, npw + col)] = v;
                h[(npw + col, p)] = v.conj();
            }
        }
        h
    }

    /// Dense `M`.
    pub fn dense_m(&self) -> Mat<Complex64> {
        let n = self.n();
        let npw = self.n_pw();
        let mut m = Mat::<Complex64>::zeros(n, n);
        m.as_mut().submatrix_mut(0, 0, npw, npw).copy_from(self.ma.as_ref());
        self.fill_spline(&mut m, &self.mb);
        m
    }

    /// Dense `P_Γ`, the σ-derivative of `H` times σ.
    pub fn dense_penalty(&self) -> Mat<Complex64> {
        let n = self.n();
        let npw = self.n_pw();
        let mut m = Mat::<Complex64>::zeros(n, n);
        for q in 0..npw {
            for p in 0..npw {
                m[(p, q)] = self.penalty.pw_entry(p, q);
            }
        }
        self.fill_spline(&mut m, &self.penalty.b);
        for (r, &col) in self.hc_cols.iter().enumerate() {
            for p in 0..npw {
                let v = self.penalty.c[(p, r)];
                m[(p, npw + col)] = v;
                m[(npw + col, p)] = v.conj();
            }
        }
        m
    }

    fn fill_spline(&self, out: &mut Mat<Complex64>, b: &Csr) {
        let npw = self.n_pw();
        let pat = &b.pattern;
        for i in 0..pat.n {
            for k in pat.row_ptr[i]..pat.row_ptr[i + 1] {
                out[(npw + i, npw + pat.cols[k])] = Complex64::new(b.vals[k], 0.0);
            }
        }
    }

    /// `max |H - H†|` over the stored blocks.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.n_pw();
        let mut worst = 0.0f64;
        for q in 0..n {
            for p in 0..=q {
                worst = worst.max((self.ha[(p, q)] - self.ha[(q, p)].conj()).norm());
                worst = worst.max((self.ma[(p, q)] - self.ma[(q, p)].conj()).norm());
            }
        }
        worst.max(self.hb.symmetry_defect()).max(self.mb.symmetry_defect())
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = self.hb.max_abs();
        for q in 0..self.ha.ncols() {
            for p in 0..self.ha.nrows() {
                m = m.max(self.ha[(p, q)].norm());
            }
        }
        for q in 0..self.hc.ncols() {
            for p in 0..self.hc.nrows() {
                m = m.max(self.hc[(p, q)].norm());
            }
        }
        m
    }

    /// Adds a further potential: `v_out(n_q - n_p)` on the plane-wave block
    /// and its patch mass matrices on the spline block.
    pub fn add_potential(&mut self, disc: &Discretization, v_out: &FourierTable, field: &dyn PotentialField) -> Result<PotentialPart> {
        let pattern = Arc::new(tensor_band_pattern(&disc.space));
        let parts: Vec<Csr> = (0..disc.dofs.n_patches)
            .map(|patch| potential_mass(disc, patch, field, pattern.clone()))
            .collect();
        let part = PotentialPart {
            table: v_out.clone(),
            hb: Csr::block_diag(&parts.iter().collect::<Vec<_>>()),
        };
        self.apply_part(disc, &part, 1.0)?;
        Ok(part)
    }

    /// Undoes [`AssembledSystem::add_potential`].
    pub fn remove_potential(&mut self, disc: &Discretization, part: &PotentialPart) -> Result<()> {
        self.apply_part(disc, part, -1.0)
    }

    fn apply_part(&mut self, disc: &Discretization, part: &PotentialPart, sign: f64) -> Result<()> {
        let npw = self.n_pw();
        for q in 0..npw {
            let nq = disc.waves.indices[q];
            for p in 0..npw {
                let np = disc.waves.indices[p];
                self.ha[(p, q)] += sign * part.table.get(&[nq[0] - np[0], nq[1] - np[1], nq[2] - np[2]])?;
            }
        }
        self.hb = self.hb.axpy(sign, &part.hb);
        Ok(())
    }

    /// Structural support of `P_Γ`: every plane wave and every spline with a
    /// nonzero trace on Γ, independent of the value of σ.
    pub fn penalty_support(&self) -> Vec<bool> {
        let npw = self.n_pw();
        let mut on = vec![true; npw];
        on.extend(self.trace_dofs.iter().copied());
        on
    }
}
