//! Blocked preconditioned eigensolver for `H c = λ M c`, the trace-block
//! preconditioner and dense condition-number diagnostics.

use std::io::Write;

use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatMut, MatRef, Par, Side};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};

use crate::assembly::AssembledSystem;
use crate::error::{Error, Result};

const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// A Hermitian pencil `(H, M)` seen through its action on blocks of vectors.
pub trait Pencil {
    fn n(&self) -> usize;
    fn apply_h(&self, x: MatRef<'_, Complex64>, y: MatMut<'_, Complex64>);
    fn apply_m(&self, x: MatRef<'_, Complex64>, y: MatMut<'_, Complex64>);
}

impl Pencil for AssembledSystem {
    fn n(&self) -> usize {
        AssembledSystem::n(self)
    }

    fn apply_h(&self, x: MatRef<'_, Complex64>, y: MatMut<'_, Complex64>) {
        AssembledSystem::apply_h(self, x, y)
    }

    fn apply_m(&self, x: MatRef<'_, Complex64>, y: MatMut<'_, Complex64>) {
        AssembledSystem::apply_m(self, x, y)
    }
}

/// Dense pencil, mostly for tests and small problems.
#[derive(Clone, Debug)]
pub struct DensePencil {
    pub h: Mat<Complex64>,
    pub m: Mat<Complex64>,
}

impl DensePencil {
    pub fn standard(h: Mat<Complex64>) -> Self {
        let n = h.nrows();
        Self {
            h,
            m: Mat::identity(n, n),
        }
    }

    pub fn from_system(sys: &AssembledSystem) -> Self {
        Self {
            h: sys.dense_h(),
            m: sys.dense_m(),
        }
    }

    /// All generalized eigenvalues, ascending.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(dense_generalized(self.h.as_ref(), self.m.as_ref())?.0)
    }
}

impl Pencil for DensePencil {
    fn n(&self) -> usize {
        self.h.nrows()
    }

    fn apply_h(&self, x: MatRef<'_, Complex64>, y: MatMut<'_, Complex64>) {
        matmul(y, Accum::Replace, self.h.as_ref(), x, ONE, Par::Seq);
    }

    fn apply_m(&self, x: MatRef<'_, Complex64>, y: MatMut<'_, Complex64>) {
        matmul(y, Accum::Replace, self.m.as_ref(), x, ONE, Par::Seq);
    }
}

/// Dense generalized Hermitian eigenproblem via Cholesky reduction.
/// Returns ascending eigenvalues and `M`-orthonormal eigenvectors.
pub fn dense_generalized(h: MatRef<'_, Complex64>, m: MatRef<'_, Complex64>) -> Result<(Vec<f64>, Mat<Complex64>)> {
    let n = h.nrows();
    let llt = m.llt(Side::Lower).map_err(|_| Error::OverlapNotDefinite)?;
    let l = llt.L();
    // C = L^{-1} H L^{-H}
    let mut c = h.to_owned();
    solve_lower_triangular_in_place(l, c.as_mut(), Par::Seq);
    let mut ct = c.adjoint().to_owned();
    solve_lower_triangular_in_place(l, ct.as_mut(), Par::Seq);
    let c = Mat::from_fn(n, n, |i, j| 0.5 * (ct[(i, j)] + ct[(j, i)].conj()));
    let eig = c
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::Factorization("dense eigensolver failed".into()))?;
    let s = eig.S().column_vector();
    let vals: Vec<f64> = (0..n).map(|i| s[i].re).collect();
    // x = L^{-H} y
    let mut x = eig.U().to_owned();
    faer::linalg::triangular_solve::solve_upper_triangular_in_place(l.adjoint(), x.as_mut(), Par::Seq);
    Ok((vals, x))
}

/// Interface-coupled (γ) and interior (η) indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DofPartition {
    pub gamma: Vec<usize>,
    pub eta: Vec<usize>,
}

impl DofPartition {
    pub fn from_support(support: &[bool]) -> Self {
        let (mut gamma, mut eta) = (Vec::new(), Vec::new());
        for (i, &s) in support.iter().enumerate() {
            if s {
                gamma.push(i);
            } else {
                eta.push(i);
            }
        }
        Self { gamma, eta }
    }
}

/// γ = rows of `P_Γ` that are structurally nonzero, η the rest.
pub fn partition_dofs(sys: &AssembledSystem) -> DofPartition {
    DofPartition::from_support(&sys.penalty_support())
}

/// Approximate inverse of `A_τ = H - τM` applied to residual blocks.
pub trait Preconditioner {
    fn apply(&self, r: MatRef<'_, Complex64>, z: MatMut<'_, Complex64>);
    /// The matrix whose inverse [`Preconditioner::apply`] applies.
    fn dense_matrix(&self, n: usize) -> Mat<Complex64>;
    fn name(&self) -> &'static str;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl Preconditioner for Identity {
    fn apply(&self, r: MatRef<'_, Complex64>, mut z: MatMut<'_, Complex64>) {
        z.copy_from(r);
    }

    fn dense_matrix(&self, n: usize) -> Mat<Complex64> {
        Mat::identity(n, n)
    }

    fn name(&self) -> &'static str {
        "none"
    }
}

/// Inverse absolute diagonal of `A_τ`.
#[derive(Clone, Debug)]
pub struct Jacobi {
    pub diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(sys: &AssembledSystem, tau: f64) -> Self {
        Self::from_diagonal(shifted_diagonal(sys, tau))
    }

    pub fn from_diagonal(d: Vec<f64>) -> Self {
        let floor = d.iter().fold(0.0f64, |m, x| m.max(x.abs())) * 1e-14;
        Self {
            diag: d.iter().map(|x| x.abs().max(floor).max(f64::MIN_POSITIVE)).collect(),
        }
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: MatRef<'_, Complex64>, mut z: MatMut<'_, Complex64>) {
        for j in 0..r.ncols() {
            for i in 0..r.nrows() {
                z[(i, j)] = r[(i, j)] / self.diag[i];
            }
        }
    }

    fn dense_matrix(&self, n: usize) -> Mat<Complex64> {
        Mat::from_fn(n, n, |i, j| if i == j { Complex64::new(self.diag[i], 0.0) } else { ZERO })
    }

    fn name(&self) -> &'static str {
        "jacobi"
    }
}

fn shifted_diagonal(sys: &AssembledSystem, tau: f64) -> Vec<f64> {
    let mut d: Vec<f64> = (0..sys.n_pw()).map(|i| sys.ha[(i, i)].re - tau * sys.ma[(i, i)].re).collect();
    let hb = sys.hb.diagonal();
    let mb = sys.mb.diagonal();
    d.extend(hb.iter().zip(&mb).map(|(h, m)| h - tau * m));
    d
}

/// Trace-block DG preconditioner: exact Cholesky solve on γ, absolute
/// diagonal on η.
#[derive(Debug)]
pub struct TraceBlock {
    pub partition: DofPartition,
    pub tau: f64,
    /// Final shift after escalation.
    pub delta: f64,
    pub d_eta: Vec<f64>,
    factor: Mat<Complex64>,
    a_gg: Mat<Complex64>,
}

/// Limit on the number of shift doublings before giving up.
const MAX_ESCALATIONS: usize = 80;

impl TraceBlock {
    /// Builds from the γγ block of `A_τ` and the η diagonal.
    pub fn from_parts(partition: DofPartition, a_gg: Mat<Complex64>, eta_diag: &[f64], tau: f64, delta: f64) -> Result<Self> {
        let g = a_gg.nrows();
        let scale = (0..g)
            .flat_map(|j| (0..g).map(move |i| (i, j)))
            .fold(0.0f64, |m, (i, j)| m.max(a_gg[(i, j)].norm()))
            .max(f64::MIN_POSITIVE);
        let mut delta = delta.max(0.0);
        let mut tries = 0;
        let factor = loop {
            let mut shifted = a_gg.clone();
            for i in 0..g {
                shifted[(i, i)] += delta;
            }
            match shifted.llt(Side::Lower) {
                Ok(llt) => break llt.L().to_owned(),
                Err(_) => {
                    tries += 1;
                    if tries > MAX_ESCALATIONS {
                        return Err(Error::Factorization(format!("interface block not factorizable up to shift {delta:e}")));
                    }
                    delta = if delta == 0.0 { 1e-8 * scale } else { 2.0 * delta };
                }
            }
        };
        if delta > 0.0 {
            log::debug!("trace block shift escalated to {delta:e}");
        }
        let floor = scale * 1e-14;
        let d_eta = eta_diag.iter().map(|x| x.abs().max(floor)).collect();
        Ok(Self {
            partition,
            tau,
            delta,
            d_eta,
            factor,
            a_gg,
        })
    }

    pub fn gamma_len(&self) -> usize {
        self.partition.gamma.len()
    }
}

/// Trace-block preconditioner of `A_τ = H - τM`. `delta` is the initial
/// shift; `None` means zero with escalation on breakdown.
pub fn build_tbdg(sys: &AssembledSystem, tau: f64, delta: Option<f64>) -> Result<TraceBlock> {
    let part = partition_dofs(sys);
    let npw = sys.n_pw();
    let g = part.gamma.len();
    // position of every spline in γ (if any)
    let mut pos = vec![usize::MAX; sys.n()];
    for (a, &i) in part.gamma.iter().enumerate() {
        pos[i] = a;
    }
    let mut a = Mat::<Complex64>::zeros(g, g);
    for q in 0..npw {
        for p in 0..npw {
            a[(p, q)] = sys.ha[(p, q)] - tau * sys.ma[(p, q)];
        }
    }
    let (hb, mb) = (&sys.hb, &sys.mb);
    let pat = &hb.pattern;
    for i in 0..pat.n {
        let gi = pos[npw + i];
        if gi == usize::MAX {
            continue;
        }
        for k in pat.row_ptr[i]..pat.row_ptr[i + 1] {
            let gj = pos[npw + pat.cols[k]];
            if gj != usize::MAX {
                a[(gi, gj)] = Complex64::new(hb.vals[k] - tau * mb.vals[k], 0.0);
            }
        }
    }
    for (r, &col) in sys.hc_cols.iter().enumerate() {
        let gc = pos[npw + col];
        if gc == usize::MAX {
            continue;
        }
        for p in 0..npw {
            let v = sys.hc[(p, r)];
            a[(p, gc)] = v;
            a[(gc, p)] = v.conj();
        }
    }
    let diag = shifted_diagonal(sys, tau);
    let eta_diag: Vec<f64> = part.eta.iter().map(|&i| diag[i]).collect();
    TraceBlock::from_parts(part, a, &eta_diag, tau, delta.unwrap_or(0.0))
}

impl Preconditioner for TraceBlock {
    fn apply(&self, r: MatRef<'_, Complex64>, mut z: MatMut<'_, Complex64>) {
        let m = r.ncols();
        let gam = &self.partition.gamma;
        let mut rg = Mat::from_fn(gam.len(), m, |i, j| r[(gam[i], j)]);
        solve_lower_triangular_in_place(self.factor.as_ref(), rg.as_mut(), Par::Seq);
        faer::linalg::triangular_solve::solve_upper_triangular_in_place(self.factor.adjoint(), rg.as_mut(), Par::Seq);
        for j in 0..m {
            for (a, &i) in gam.iter().enumerate() {
                z[(i, j)] = rg[(a, j)];
            }
            for (a, &i) in self.partition.eta.iter().enumerate() {
                z[(i, j)] = r[(i, j)] / self.d_eta[a];
            }
        }
    }

    fn dense_matrix(&self, n: usize) -> Mat<Complex64> {
        let mut out = Mat::<Complex64>::zeros(n, n);
        let gam = &self.partition.gamma;
        for (b, &j) in gam.iter().enumerate() {
            for (a, &i) in gam.iter().enumerate() {
                out[(i, j)] = self.a_gg[(a, b)];
            }
            out[(j, j)] += self.delta;
        }
        for (a, &i) in self.partition.eta.iter().enumerate() {
            out[(i, i)] = Complex64::new(self.d_eta[a], 0.0);
        }
        out
    }

    fn name(&self) -> &'static str {
        "tbdg"
    }
}

/// Preconditioner choice as named in configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrecondKind {
    None,
    Jacobi,
    TbDg,
}

impl std::str::FromStr for PrecondKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "jacobi" => Ok(Self::Jacobi),
            "tbdg" => Ok(Self::TbDg),
            other => Err(Error::InvalidParameter(format!("unknown preconditioner '{other}'"))),
        }
    }
}

impl PrecondKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Jacobi => "jacobi",
            Self::TbDg => "tbdg",
        }
    }

    pub fn build(self, sys: &AssembledSystem, tau: f64) -> Result<Box<dyn Preconditioner>> {
        Ok(match self {
            Self::None => Box::new(Identity),
            Self::Jacobi => Box::new(Jacobi::new(sys, tau)),
            Self::TbDg => Box::new(build_tbdg(sys, tau, None)?),
        })
    }
}

/// Ratio of extreme absolute eigenvalues of `P^{-1/2} A_τ P^{-1/2}`, dense.
pub fn condition_estimate(pencil: &dyn Pencil, precond: &dyn Preconditioner, tau: f64) -> Result<f64> {
    let n = pencil.n();
    let eye = Mat::<Complex64>::identity(n, n);
    let mut h = Mat::<Complex64>::zeros(n, n);
    pencil.apply_h(eye.as_ref(), h.as_mut());
    if tau != 0.0 {
        let mut m = Mat::<Complex64>::zeros(n, n);
        pencil.apply_m(eye.as_ref(), m.as_mut());
        h = Mat::from_fn(n, n, |i, j| h[(i, j)] - tau * m[(i, j)]);
    }
    let p = precond.dense_matrix(n);
    let (vals, _) = dense_generalized(h.as_ref(), p.as_ref())?;
    let abs: Vec<f64> = vals.iter().map(|v| v.abs()).collect();
    let hi = abs.iter().cloned().fold(0.0, f64::max);
    let lo = abs.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(hi / lo)
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub nev: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Extra block columns beyond `nev`.
    pub guard: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            nev: 1,
            tol: 1e-8,
            max_iter: 1000,
            seed: 7,
            guard: 3,
        }
    }
}

/// One row of the residual trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub idx: usize,
    pub residual: f64,
    pub rayleigh: f64,
}

#[derive(Clone, Debug)]
pub struct EigenSolution {
    pub eigenvalues: Vec<f64>,
    /// `M`-orthonormal, one column per eigenvalue.
    pub vectors: Mat<Complex64>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

impl EigenSolution {
    /// Residual trace as CSV with header `iter,idx,residual,rayleigh`.
    pub fn write_trace<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iter,idx,residual,rayleigh")?;
        for r in &self.trace {
            writeln!(w, "{},{},{:.6e},{:.15e}", r.iter, r.idx, r.residual, r.rayleigh)?;
        }
        Ok(())
    }

    /// First iteration at which all tracked residuals fall below `tol`.
    pub fn iterations_to(&self, tol: f64) -> Option<usize> {
        let nev = self.eigenvalues.len();
        let last = self.trace.last()?.iter;
        (0..=last).find(|&it| {
            let rows: Vec<_> = self.trace.iter().filter(|r| r.iter == it && r.idx < nev).collect();
            rows.len() == nev && rows.iter().all(|r| r.residual <= tol)
        })
    }
}

fn gram(a: MatRef<'_, Complex64>, b: MatRef<'_, Complex64>) -> Mat<Complex64> {
    let mut g = Mat::<Complex64>::zeros(a.ncols(), b.ncols());
    matmul(g.as_mut(), Accum::Replace, a.adjoint(), b, ONE, Par::Seq);
    g
}

fn times(a: MatRef<'_, Complex64>, c: MatRef<'_, Complex64>) -> Mat<Complex64> {
    let mut out = Mat::<Complex64>::zeros(a.nrows(), c.ncols());
    matmul(out.as_mut(), Accum::Replace, a, c, ONE, Par::Seq);
    out
}

fn hstack(blocks: &[MatRef<'_, Complex64>]) -> Mat<Complex64> {
    let n = blocks[0].nrows();
    let m: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::<Complex64>::zeros(n, m);
    let mut c = 0;
    for b in blocks {
        out.as_mut().submatrix_mut(0, c, n, b.ncols()).copy_from(*b);
        c += b.ncols();
    }
    out
}

fn hermitian_part(g: &Mat<Complex64>) -> Mat<Complex64> {
    let n = g.nrows();
    Mat::from_fn(n, n, |i, j| 0.5 * (g[(i, j)] + g[(j, i)].conj()))
}

/// `M`-orthonormalizing transform of `S` by SVQB, dropping directions whose
/// Gram eigenvalue is below `eps` relative to the largest.
fn svqb(bs_gram: &Mat<Complex64>, eps: f64) -> Result<Mat<Complex64>> {
    let n = bs_gram.nrows();
    let d: Vec<f64> = (0..n).map(|i| bs_gram[(i, i)].re.max(f64::MIN_POSITIVE).powf(-0.5)).collect();
    let scaled = Mat::from_fn(n, n, |i, j| 0.5 * (bs_gram[(i, j)] + bs_gram[(j, i)].conj()) * d[i] * d[j]);
    let eig = scaled
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::Factorization("SVQB eigensolve failed".into()))?;
    let s = eig.S().column_vector();
    let u = eig.U();
    let top = (0..n).map(|i| s[i].re).fold(0.0, f64::max);
    let keep: Vec<usize> = (0..n).filter(|&i| s[i].re > eps * top).collect();
    Ok(Mat::from_fn(n, keep.len(), |i, k| u[(i, keep[k])] * (d[i] / s[keep[k]].re.sqrt())))
}

/// Lowest `nev` eigenpairs by locally optimal block preconditioned conjugate
/// gradients. Residuals are `‖Hc - λMc‖ / ‖c‖_M`.
///
/// The Ritz step works on the small Gram matrices of `[X, W, P]` and the
/// products of the new iterate are recomputed every step, so that nearly
/// dependent search directions cannot corrupt the Rayleigh quotients.
pub fn solve_lowest(pencil: &dyn Pencil, precond: &dyn Preconditioner, opts: &SolverOptions, start: Option<MatRef<'_, Complex64>>) -> Result<EigenSolution> {
    let n = pencil.n();
    if opts.nev == 0 {
        return Err(Error::InvalidParameter("nev must be at least 1".into()));
    }
    let m = (opts.nev + opts.guard).min(n);
    if opts.nev > m {
        return Err(Error::InvalidParameter(format!("nev = {} exceeds the problem size {n}", opts.nev)));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x = Mat::from_fn(n, m, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    if let Some(s) = start {
        let c = s.ncols().min(m);
        x.as_mut().submatrix_mut(0, 0, n, c).copy_from(s.submatrix(0, 0, n, c));
    }
    let apply = |v: MatRef<'_, Complex64>| {
        let mut hv = Mat::<Complex64>::zeros(n, v.ncols());
        let mut mv = Mat::<Complex64>::zeros(n, v.ncols());
        pencil.apply_h(v, hv.as_mut());
        pencil.apply_m(v, mv.as_mut());
        (hv, mv)
    };

    let (hx0, mx0) = apply(x.as_ref());
    let y = ritz(&x, &hx0, &mx0, m).ok_or_else(|| Error::Factorization("initial block is rank deficient".into()))?;
    x = times(x.as_ref(), y.as_ref());
    let (mut hx, mut mx) = apply(x.as_ref());
    let mut p: Option<(Mat<Complex64>, Mat<Complex64>)> = None;
    let mut trace = Vec::new();
    let mut lam = vec![0.0; m];
    let mut res = vec![f64::INFINITY; m];
    let mut iterations = 0;
    let mut converged = false;

    for it in 0..=opts.max_iter {
        // Rayleigh quotients and residuals from fresh products
        let mut r = Mat::<Complex64>::zeros(n, m);
        for j in 0..m {
            let mut xh = ZERO;
            let mut xm = 0.0;
            for i in 0..n {
                xh += x[(i, j)].conj() * hx[(i, j)];
                xm += (x[(i, j)].conj() * mx[(i, j)]).re;
            }
            let xm = xm.max(f64::MIN_POSITIVE);
            lam[j] = xh.re / xm;
            let mut acc = 0.0;
            for i in 0..n {
                let v = hx[(i, j)] - lam[j] * mx[(i, j)];
                r[(i, j)] = v;
                acc += v.norm_sqr();
            }
            res[j] = acc.sqrt() / xm.sqrt();
            trace.push(TraceRow {
                iter: it,
                idx: j,
                residual: res[j],
                rayleigh: lam[j],
            });
        }
        iterations = it;
        if res[..opts.nev].iter().all(|&v| v <= opts.tol) {
            converged = true;
            break;
        }
        if it == opts.max_iter {
            break;
        }
        let active: Vec<usize> = (0..m).filter(|&j| res[j] > opts.tol * 0.1).collect();
        let ra = Mat::from_fn(n, active.len(), |i, k| r[(i, active[k])]);
        let mut w = Mat::<Complex64>::zeros(n, active.len());
        precond.apply(ra.as_ref(), w.as_mut());
        // remove the X component in the M inner product
        let proj = gram(mx.as_ref(), w.as_ref());
        matmul(w.as_mut(), Accum::Add, x.as_ref(), proj.as_ref(), -ONE, Par::Seq);
        let mut mw = Mat::<Complex64>::zeros(n, w.ncols());
        pencil.apply_m(w.as_ref(), mw.as_mut());

        let (s, ms) = match &p {
            Some((pp, mp)) => (hstack(&[x.as_ref(), w.as_ref(), pp.as_ref()]), hstack(&[mx.as_ref(), mw.as_ref(), mp.as_ref()])),
            None => (hstack(&[x.as_ref(), w.as_ref()]), hstack(&[mx.as_ref(), mw.as_ref()])),
        };
        // explicit M-orthonormal basis with fresh products, so that the
        // Ritz step never sees an ill-conditioned transform
        let t = match svqb(&gram(s.as_ref(), ms.as_ref()), 1e-12) {
            Ok(t) if t.ncols() >= m => t,
            _ => {
                p = None;
                continue;
            }
        };
        let so = times(s.as_ref(), t.as_ref());
        let (hso, mso) = apply(so.as_ref());
        let Some(y) = ritz(&so, &hso, &mso, m) else {
            // lose the conjugate directions and retry
            p = None;
            continue;
        };
        let x_new = times(so.as_ref(), y.as_ref());
        let hx_new = times(hso.as_ref(), y.as_ref());
        let mx_new = times(mso.as_ref(), y.as_ref());
        // conjugate direction: new iterate minus its component along the old X
        let k = gram(mx.as_ref(), x_new.as_ref());
        let mut pp = x_new.clone();
        let mut mp = mx_new.clone();
        matmul(pp.as_mut(), Accum::Add, x.as_ref(), k.as_ref(), -ONE, Par::Seq);
        matmul(mp.as_mut(), Accum::Add, mx.as_ref(), k.as_ref(), -ONE, Par::Seq);
        p = Some((pp, mp));
        x = x_new;
        hx = hx_new;
        mx = mx_new;
    }

    let nev = opts.nev;
    Ok(EigenSolution {
        eigenvalues: lam[..nev].to_vec(),
        vectors: x.as_ref().submatrix(0, 0, n, nev).to_owned(),
        residuals: res[..nev].to_vec(),
        iterations,
        converged,
        trace,
    })
}

/// Rayleigh-Ritz on the span of `s`: coefficients of the lowest `m` Ritz
/// vectors, `M`-orthonormal. Near dependent directions are dropped by two
/// SVQB passes on the small Gram matrices; `None` if fewer than `m` remain.
fn ritz(s: &Mat<Complex64>, hs: &Mat<Complex64>, ms: &Mat<Complex64>, m: usize) -> Option<Mat<Complex64>> {
    let gh = hermitian_part(&gram(s.as_ref(), hs.as_ref()));
    let gm = hermitian_part(&gram(s.as_ref(), ms.as_ref()));
    let t1 = svqb(&gm, 1e-12).ok()?;
    let gm1 = hermitian_part(&gram(t1.as_ref(), times(gm.as_ref(), t1.as_ref()).as_ref()));
    let t2 = svqb(&gm1, 1e-10).ok()?;
    if t2.ncols() < m {
        return None;
    }
    let t = times(t1.as_ref(), t2.as_ref());
    let g = hermitian_part(&gram(t.as_ref(), times(gh.as_ref(), t.as_ref()).as_ref()));
    let eig = g.self_adjoint_eigen(Side::Lower).ok()?;
    let u = eig.U();
    let c = Mat::from_fn(g.nrows(), m, |i, j| u[(i, j)]);
    Some(times(t.as_ref(), c.as_ref()))
}

/// `max |X† M X - I|` of a block.
pub fn orthonormality_defect(pencil: &dyn Pencil, x: MatRef<'_, Complex64>) -> f64 {
    let mut mx = Mat::<Complex64>::zeros(x.nrows(), x.ncols());
    pencil.apply_m(x, mx.as_mut());
    let g = gram(x, mx.as_ref());
    let mut worst = 0.0f64;
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            let target = if i == j { ONE } else { ZERO };
            worst = worst.max((g[(i, j)] - target).norm());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(vals: &[f64]) -> Mat<Complex64> {
        let n = vals.len();
        Mat::from_fn(n, n, |i, j| if i == j { Complex64::new(vals[i], 0.0) } else { ZERO })
    }

    #[test]
    fn two_by_two() {
        let p = DensePencil::standard(diag(&[2.0, 1.0]));
        let opts = SolverOptions {
            nev: 2,
            tol: 1e-12,
            guard: 0,
            ..Default::default()
        };
        let sol = solve_lowest(&p, &Identity, &opts, None).unwrap();
        assert!((sol.eigenvalues[0] - 1.0).abs() < 1e-14 && (sol.eigenvalues[1] - 2.0).abs() < 1e-14);
        assert!((sol.vectors[(1, 0)].norm() - 1.0).abs() < 1e-12);
        assert!((sol.vectors[(0, 1)].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn condition_of_diagonal() {
        let p = DensePencil::standard(Mat::identity(5, 5));
        assert!((condition_estimate(&p, &Identity, 0.0).unwrap() - 1.0).abs() < 1e-12);
        let p = DensePencil::standard(diag(&[1.0, 1e4]));
        assert!((condition_estimate(&p, &Identity, 0.0).unwrap() - 1e4).abs() < 1e-8);
        let j = Jacobi::from_diagonal(vec![1.0, 1e4]);
        assert!((condition_estimate(&p, &j, 0.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_trace_block_is_jacobi() {
        let d = [3.0, -2.0, 5.0, 0.5, 7.0];
        let part = DofPartition::from_support(&[true, false, true, false, true]);
        let a_gg = diag(&[3.0, 5.0, 7.0]);
        let tb = TraceBlock::from_parts(part, a_gg, &[-2.0, 0.5], 0.0, 0.0).unwrap();
        assert_eq!(tb.delta, 0.0);
        let j = Jacobi::from_diagonal(d.to_vec());
        let r = Mat::from_fn(5, 2, |i, k| Complex64::new(i as f64 + 1.0, k as f64 - 0.5));
        let mut z1 = Mat::<Complex64>::zeros(5, 2);
        let mut z2 = Mat::<Complex64>::zeros(5, 2);
        tb.apply(r.as_ref(), z1.as_mut());
        j.apply(r.as_ref(), z2.as_mut());
        for k in 0..2 {
            for i in 0..5 {
                assert!((z1[(i, k)] - z2[(i, k)]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn shift_escalates_on_indefinite_block() {
        let part = DofPartition::from_support(&[true, true]);
        let a = diag(&[1.0, -0.5]);
        let tb = TraceBlock::from_parts(part, a, &[], 0.0, 0.0).unwrap();
        assert!(tb.delta > 0.5 && tb.delta < 1.0 + 1e-6);
    }

    #[test]
    fn generalized_dense() {
        let h = diag(&[2.0, 6.0]);
        let m = diag(&[2.0, 3.0]);
        let (vals, x) = dense_generalized(h.as_ref(), m.as_ref()).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[1] - 2.0).abs() < 1e-14);
        let p = DensePencil { h, m };
        assert!(orthonormality_defect(&p, x.as_ref()) < 1e-14);
    }
}
