//! Self-consistent field drivers: Gross-Pitaevskii (`V_nl = ρ`) and periodic
//! Hartree (`V_nl = V_H[ρ]`), linear mixing on the orbital.

use std::io::Write;

use faer::{Mat, MatRef};
use num_complex::Complex64;

use crate::assembly::{AssembledSystem, Discretization, PotentialPart};
use crate::eigensolve::{solve_lowest, PrecondKind, Preconditioner, SolverOptions};
use crate::error::{Error, Result};
use crate::fourier::FourierSeries;
use crate::potentials::hartree_solve;
use crate::state::{density_coefficients, density_l2_squared, density_out, v_out_trig, DensityField, Orbital};

/// Which density-dependent term closes the loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Nonlinearity {
    /// `V_nl = ρ`.
    GrossPitaevskii,
    /// `V_nl = V_H[ρ]`, zero mode removed.
    Hartree,
}

impl Nonlinearity {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::GrossPitaevskii => "gp",
            Self::Hartree => "hartree",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScfConfig {
    /// Weight of the old orbital in the mix, in `(0, 1)`.
    pub theta: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Electrons per orbital: 1 for GP, 2 for helium.
    pub occupation: f64,
    pub eig_tol: f64,
    pub eig_max_iter: usize,
    pub precond: PrecondKind,
    /// Shift of the preconditioner.
    pub tau: f64,
    pub seed: u64,
    pub guard: usize,
}

impl Default for ScfConfig {
    fn default() -> Self {
        Self {
            theta: 0.5,
            tol: 1e-8,
            max_iter: 200,
            occupation: 1.0,
            eig_tol: 1e-10,
            eig_max_iter: 2000,
            precond: PrecondKind::TbDg,
            tau: 0.0,
            seed: 7,
            guard: 2,
        }
    }
}

impl ScfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::InvalidParameter(format!("mixing weight {} outside (0, 1)", self.theta)));
        }
        if !(self.tol > 0.0 && self.occupation > 0.0) {
            return Err(Error::InvalidParameter("SCF tolerance and occupation must be positive".into()));
        }
        Ok(())
    }
}

/// One SCF step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScfStep {
    pub iter: usize,
    pub lambda: f64,
    /// `‖ρ_out − ρ_in‖_{L²}`.
    pub density_residual: f64,
    pub energy: f64,
    /// `∫ρ_in`, by quadrature.
    pub charge: f64,
    pub eig_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct GroundState {
    pub lambda: f64,
    /// `M`-normalized, largest-magnitude coefficient real positive.
    pub coeffs: Vec<Complex64>,
    /// Full-cell density coefficients up to offset `2K`.
    pub density: FourierSeries,
    pub energy: f64,
    pub history: Vec<ScfStep>,
    pub converged: bool,
    pub nonlinearity: Nonlinearity,
}

impl GroundState {
    /// History as CSV with header `iter,lambda,density_residual,energy`.
    pub fn write_history<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iter,lambda,density_residual,energy")?;
        for s in &self.history {
            writeln!(w, "{},{:.15e},{:.6e},{:.15e}", s.iter, s.lambda, s.density_residual, s.energy)?;
        }
        Ok(())
    }

    pub fn orbital<'a>(&'a self, disc: &'a Discretization) -> Orbital<'a> {
        Orbital::new(disc, &self.coeffs)
    }
}

/// Density-dependent potential of `u` added to `sys`, with `½∫V_nl ρ`.
fn add_nonlinear(sys: &mut AssembledSystem, disc: &Discretization, kind: Nonlinearity, orb: &Orbital<'_>, occ: f64) -> Result<(PotentialPart, f64)> {
    let ext = 2 * disc.waves.cutoff as i64;
    let vol = disc.decomp.cell.volume();
    match kind {
        Nonlinearity::GrossPitaevskii => {
            let table = v_out_trig(&density_out(orb, occ), &disc.decomp, ext);
            let field = DensityField {
                orbital: Orbital::new(disc, orb.coeffs),
                occupation: occ,
            };
            let part = sys.add_potential(disc, &table, &field)?;
            Ok((part, 0.5 * density_l2_squared(orb, None, occ)))
        }
        Nonlinearity::Hartree => {
            let rho = density_coefficients(orb, occ, ext);
            let vh = hartree_solve(&rho)?;
            let table = v_out_trig(&vh, &disc.decomp, ext);
            let part = sys.add_potential(disc, &table, &vh)?;
            let pair: f64 = rho.coeffs.iter().zip(&vh.coeffs).map(|(r, v)| (r.conj() * v).re).sum::<f64>() * vol;
            Ok((part, 0.5 * pair))
        }
    }
}

fn m_inner(sys: &AssembledSystem, a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let n = b.len();
    let mut mb = Mat::<Complex64>::zeros(n, 1);
    sys.apply_m(MatRef::from_column_major_slice(b, n, 1), mb.as_mut());
    (0..n).map(|i| a[i].conj() * mb[(i, 0)]).sum()
}

fn normalize(sys: &AssembledSystem, c: &mut [Complex64]) {
    let s = m_inner(sys, c, c).re.sqrt();
    for v in c.iter_mut() {
        *v /= s;
    }
}

/// Largest-magnitude coefficient made real positive.
pub fn fix_gauge(c: &mut [Complex64]) {
    let Some(big) = c.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())) else {
        return;
    };
    if big.norm() == 0.0 {
        return;
    }
    let phase = big.conj() / big.norm();
    for v in c.iter_mut() {
        *v *= phase;
    }
}

/// SCF on the lowest orbital. `sys` holds kinetic, external potential and
/// penalty terms and is restored on return.
pub fn run_scf(sys: &mut AssembledSystem, disc: &Discretization, kind: Nonlinearity, cfg: &ScfConfig) -> Result<GroundState> {
    cfg.validate()?;
    let n = sys.dofs.total();
    let occ = cfg.occupation;
    let precond: Box<dyn Preconditioner> = cfg.precond.build(sys, cfg.tau)?;
    let opts = SolverOptions {
        nev: 1,
        tol: cfg.eig_tol,
        max_iter: cfg.eig_max_iter,
        seed: cfg.seed,
        guard: cfg.guard,
    };
    // linear problem for the starting orbital
    let first = solve_lowest(sys, precond.as_ref(), &opts, None)?;
    let mut u_in: Vec<Complex64> = (0..n).map(|i| first.vectors[(i, 0)]).collect();
    let mut history = Vec::new();
    let mut lambda_prev = f64::INFINITY;
    let mut converged = false;
    let mut last = None;

    for iter in 0..cfg.max_iter {
        let orb_in = Orbital::new(disc, &u_in);
        let charge = density_coefficients(&orb_in, occ, 0).coeffs[0].re * disc.decomp.cell.volume();
        let (part, half_pair) = add_nonlinear(sys, disc, kind, &orb_in, occ)?;
        let solved = solve_lowest(sys, precond.as_ref(), &opts, Some(MatRef::from_column_major_slice(&u_in, n, 1)));
        sys.remove_potential(disc, &part)?;
        let sol = solved?;
        let lambda = sol.eigenvalues[0];
        let mut u_out: Vec<Complex64> = (0..n).map(|i| sol.vectors[(i, 0)]).collect();
        // align the phase of the output with the input before mixing
        let ov = m_inner(sys, &u_in, &u_out);
        if ov.norm() > 0.0 {
            let phase = ov.conj() / ov.norm();
            for v in u_out.iter_mut() {
                *v *= phase;
            }
        }
        let orb_out = Orbital::new(disc, &u_out);
        let density_residual = density_l2_squared(&orb_out, Some(&orb_in), occ).sqrt();
        let energy = occ * lambda - half_pair;
        history.push(ScfStep {
            iter,
            lambda,
            density_residual,
            energy,
            charge,
            eig_iterations: sol.iterations,
        });
        log::debug!("scf {iter}: lambda {lambda:.12} residual {density_residual:.3e} energy {energy:.12}");
        let delta = (lambda - lambda_prev).abs().max(density_residual);
        lambda_prev = lambda;
        if delta < cfg.tol {
            converged = true;
            last = Some((lambda, u_out, energy));
            break;
        }
        for (a, b) in u_in.iter_mut().zip(&u_out) {
            *a = cfg.theta * *a + (1.0 - cfg.theta) * b;
        }
        normalize(sys, &mut u_in);
        last = Some((lambda, u_out, energy));
    }

    let (lambda, mut coeffs, energy) = last.ok_or_else(|| Error::InvalidParameter("SCF needs at least one iteration".into()))?;
    fix_gauge(&mut coeffs);
    let density = density_coefficients(&Orbital::new(disc, &coeffs), occ, 2 * disc.waves.cutoff as i64);
    Ok(GroundState {
        lambda,
        coeffs,
        density,
        energy,
        history,
        converged,
        nonlinearity: kind,
    })
}

pub fn gp_scf(sys: &mut AssembledSystem, disc: &Discretization, cfg: &ScfConfig) -> Result<GroundState> {
    run_scf(sys, disc, Nonlinearity::GrossPitaevskii, cfg)
}

pub fn hartree_scf(sys: &mut AssembledSystem, disc: &Discretization, cfg: &ScfConfig) -> Result<GroundState> {
    if disc.decomp.dim() != 3 {
        return Err(Error::Unsupported("the Hartree model is three-dimensional".into()));
    }
    run_scf(sys, disc, Nonlinearity::Hartree, cfg)
}

/// `occ·λ − ½∫V_nl[ρ]ρ` of a converged state.
pub fn total_energy(state: &GroundState) -> f64 {
    state.energy
}
