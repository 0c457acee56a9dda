//! Sweep execution: one solve per `(K, r)` point, errors against the
//! reference point, and the output files.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use igapw::assembly::{AssembledSystem, Discretization};
use igapw::eigensolve::{condition_estimate, solve_lowest, SolverOptions};
use igapw::export::CooMatrix;
use igapw::fftcheb::FourierTable;
use igapw::geometry::{build_decomposition, AtomicPatch, UnitCell};
use igapw::potentials::Nucleus;
use igapw::problem::{elements_for_level, ewald, Model};
use igapw::scf::{run_scf, Nonlinearity, ScfConfig};
use igapw::state::{align_cluster, error_norms, Orbital};

use crate::config::{CondMode, ExperimentConfig, Problem, CONDITION_AUTO_LIMIT};

/// Gap below which neighbouring eigenvalues form one cluster.
pub const CLUSTER_GAP: f64 = 1e-6;

/// One line of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub r: u32,
    pub h: f64,
    pub p: usize,
    pub nev_index: usize,
    pub lambda: f64,
    pub eig_error_vs_ref: f64,
    pub l2_error: f64,
    pub dg_error: f64,
    pub iters: usize,
    pub cond_estimate: f64,
    pub wall_time: f64,
}

/// Solution at one sweep point.
pub struct PointSolution {
    pub cutoff: usize,
    pub level: u32,
    pub degree: usize,
    pub disc: Discretization,
    pub eigenvalues: Vec<f64>,
    /// One coefficient vector per eigenvalue.
    pub vectors: Vec<Vec<Complex64>>,
    pub iterations: usize,
    pub converged: bool,
    pub cond_estimate: f64,
    pub wall_time: f64,
    pub scf: Option<ScfSummary>,
}

pub struct ScfSummary {
    pub energy: f64,
    pub iterations: usize,
    pub history_csv: String,
    pub max_charge_defect: f64,
}

#[derive(Debug, Default)]
pub struct RunOutcome {
    pub rows: Vec<ResultRow>,
    /// Points whose eigensolve or SCF did not converge.
    pub unconverged: Vec<(usize, u32)>,
}

/// Builds the model described by a configuration.
pub fn build_model(cfg: &ExperimentConfig) -> igapw::Result<Model> {
    let cell = UnitCell::new(cfg.length, cfg.dim)?;
    let hw = cfg.patch_half_width;
    let g_cut = cfg.g_cut.unwrap_or_else(|| igapw::potentials::EwaldParams::converged_cutoff(cfg.alpha, cfg.dim, 1e-14));
    let mut model = match cfg.problem {
        Problem::FreeParticle => {
            let decomp = build_decomposition(cell, vec![AtomicPatch::centered([0.0; 3], hw)])?;
            Model::new("free_particle", decomp, None)
        }
        Problem::Example2 => {
            let centres = [[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
            let decomp = build_decomposition(cell, centres.iter().map(|c| AtomicPatch::centered(*c, hw)).collect())?;
            let nuclei = centres.iter().map(|c| Nucleus { charge: cfg.charge, position: *c }).collect();
            let v = ewald(cell, cfg.alpha, g_cut, nuclei)?;
            Model::new("example2", decomp, Some(Arc::new(v)))
        }
        p => Model::single_atom(p.as_str(), cfg.dim, cfg.length, hw, cfg.charge, cfg.alpha, Some(g_cut))?,
    };
    if let Some(n) = cfg.n_grid {
        model.vout.n_grid = n;
    }
    if let Some(n) = cfg.cheb_degree {
        model.vout.cheb_degree = n;
    }
    Ok(model)
}

fn columns(v: &Mat<Complex64>) -> Vec<Vec<Complex64>> {
    (0..v.ncols()).map(|j| (0..v.nrows()).map(|i| v[(i, j)]).collect()).collect()
}

/// Solves sweep points of one configuration, reusing interstitial tables.
pub struct Solver<'a> {
    pub cfg: &'a ExperimentConfig,
    pub model: Model,
    tables: HashMap<usize, FourierTable>,
}

impl<'a> Solver<'a> {
    pub fn new(cfg: &'a ExperimentConfig) -> igapw::Result<Self> {
        Ok(Self {
            cfg,
            model: build_model(cfg)?,
            tables: HashMap::new(),
        })
    }

    fn table(&mut self, cutoff: usize) -> igapw::Result<FourierTable> {
        if let Some(t) = self.tables.get(&cutoff) {
            return Ok(t.clone());
        }
        let t = match &self.cfg.cache_dir {
            Some(d) => self.model.v_out_cached(cutoff, d)?,
            None => self.model.v_out(cutoff)?,
        };
        self.tables.insert(cutoff, t.clone());
        Ok(t)
    }

    /// Assembles the system of one point.
    pub fn assemble(&mut self, cutoff: usize, level: u32, degree: usize) -> igapw::Result<(Discretization, AssembledSystem)> {
        let disc = self.model.discretize(cutoff, degree, elements_for_level(level), self.cfg.c_sigma)?;
        let table = self.table(cutoff)?;
        let sys = self.model.assemble(&disc, &table)?;
        Ok((disc, sys))
    }

    /// Solves one point; traces and matrices go to `out` when given.
    pub fn solve(&mut self, cutoff: usize, level: u32, degree: usize, out: Option<&Path>) -> igapw::Result<PointSolution> {
        solve_point(self, cutoff, level, degree, out)
    }
}

fn export_system(sys: &AssembledSystem, dir: &Path, tag: &str) -> igapw::Result<()> {
    CooMatrix::from_dense(sys.dense_h().as_ref()).write(BufWriter::new(File::create(dir.join(format!("H_{tag}.coo")))?))?;
    CooMatrix::from_dense(sys.dense_m().as_ref()).write(BufWriter::new(File::create(dir.join(format!("M_{tag}.coo")))?))?;
    Ok(())
}

fn solve_point(solver: &mut Solver<'_>, cutoff: usize, level: u32, degree: usize, out: Option<&Path>) -> igapw::Result<PointSolution> {
    let t0 = Instant::now();
    let cfg = solver.cfg;
    let (disc, mut sys) = solver.assemble(cutoff, level, degree)?;
    let tag = format!("K{cutoff}_r{level}_p{degree}");
    if cfg.export_matrices {
        if let Some(dir) = out {
            export_system(&sys, dir, &tag)?;
        }
    }
    let n = sys.dofs.total();
    let want_cond = match cfg.cond_estimate {
        CondMode::On => true,
        CondMode::Off => false,
        CondMode::Auto => n <= CONDITION_AUTO_LIMIT,
    };
    log::info!("{tag}: {n} unknowns");

    let (eigenvalues, vectors, iterations, converged, scf, precond_kind) = if cfg.problem.nonlinear() {
        let (kind, occupation) = match cfg.problem {
            Problem::Example4 => (Nonlinearity::Hartree, 2.0),
            _ => (Nonlinearity::GrossPitaevskii, 1.0),
        };
        let scf_cfg = ScfConfig {
            theta: cfg.scf_theta,
            tol: cfg.scf_tol,
            max_iter: cfg.scf_max_iter,
            occupation,
            eig_tol: cfg.tol,
            eig_max_iter: cfg.max_iter,
            precond: cfg.precond,
            seed: cfg.seed,
            ..ScfConfig::default()
        };
        let gs = run_scf(&mut sys, &disc, kind, &scf_cfg)?;
        let mut history = Vec::new();
        gs.write_history(&mut history)?;
        let summary = ScfSummary {
            energy: gs.energy,
            iterations: gs.history.len(),
            history_csv: String::from_utf8(history).expect("ASCII history"),
            max_charge_defect: gs.history.iter().map(|s| (s.charge - occupation).abs()).fold(0.0, f64::max),
        };
        let eig_its = gs.history.iter().map(|s| s.eig_iterations).sum();
        (vec![gs.lambda], vec![gs.coeffs], eig_its, gs.converged, Some(summary), cfg.precond)
    } else {
        let precond = cfg.precond.build(&sys, 0.0)?;
        let opts = SolverOptions {
            nev: cfg.nev,
            tol: cfg.tol,
            max_iter: cfg.max_iter,
            seed: cfg.seed,
            ..SolverOptions::default()
        };
        let sol = solve_lowest(&sys, precond.as_ref(), &opts, None)?;
        if let Some(dir) = out {
            sol.write_trace(BufWriter::new(File::create(dir.join(format!("trace_{tag}.csv")))?))?;
        }
        (sol.eigenvalues.clone(), columns(&sol.vectors), sol.iterations, sol.converged, None, cfg.precond)
    };
    let cond_estimate = if want_cond {
        let precond = precond_kind.build(&sys, 0.0)?;
        condition_estimate(&sys, precond.as_ref(), 0.0)?
    } else {
        f64::NAN
    };
    Ok(PointSolution {
        cutoff,
        level,
        degree,
        disc,
        eigenvalues,
        vectors,
        iterations,
        converged,
        cond_estimate,
        wall_time: t0.elapsed().as_secs_f64(),
        scf,
    })
}

/// Index ranges of eigenvalue clusters, neighbours closer than `gap` joined.
pub fn clusters(values: &[f64], gap: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        if i == values.len() || (values[i] - values[i - 1]).abs() >= gap {
            if i > start {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

/// Per-eigenvalue errors `(eig, l2, dg)` of `sol` against `reference`.
/// Eigenvalue errors compare cluster means; eigenvectors are rotated onto
/// the reference cluster before the norms are taken.
pub fn point_errors(sol: &PointSolution, reference: &PointSolution) -> Vec<(f64, f64, f64)> {
    let nev = sol.eigenvalues.len().min(reference.eigenvalues.len());
    let mut out = vec![(f64::NAN, f64::NAN, f64::NAN); sol.eigenvalues.len()];
    for range in clusters(&reference.eigenvalues[..nev], CLUSTER_GAP) {
        let mean = |v: &[f64]| v[range.clone()].iter().sum::<f64>() / range.len() as f64;
        let eig = (mean(&sol.eigenvalues) - mean(&reference.eigenvalues)).abs();
        let refs: Vec<Orbital<'_>> = range.clone().map(|i| Orbital::new(&reference.disc, &reference.vectors[i])).collect();
        let apps: Vec<Orbital<'_>> = range.clone().map(|i| Orbital::new(&sol.disc, &sol.vectors[i])).collect();
        let aligned = align_cluster(&refs, &apps);
        for (j, i) in range.clone().enumerate() {
            let e = error_norms(&refs[j], &Orbital::new(&sol.disc, &aligned[j]));
            out[i] = (eig, e.l2, e.dg);
        }
    }
    out
}

fn is_same(a: &PointSolution, k: usize, r: u32, p: usize) -> bool {
    a.cutoff == k && a.level == r && a.degree == p
}

/// Lines of `meta.txt`.
pub fn meta_text(cfg: &ExperimentConfig, requested_threads: Option<usize>) -> String {
    let mut s = String::from("# resolved configuration\n");
    s.push_str(&cfg.to_text());
    s.push_str("# conventions\n");
    s.push_str("mesh_size = 0.4 / 2^r (patch side over element count)\n");
    s.push_str("ewald_constant = self_term (+2 alpha / sqrt(pi) per unit charge)\n");
    s.push_str("hartree_zero_mode = 0 (neutralizing background)\n");
    s.push_str("energy = occupation * lambda - 1/2 int V_nl[rho] rho\n");
    s.push_str("eigen_residual = ||H c - lambda M c||_2 / ||c||_M\n");
    s.push_str("eigenvalue_error = |cluster mean - reference cluster mean|, cluster gap 1e-6\n");
    s.push_str("eigenvector_gauge = cluster rotated onto the reference by the orthogonal Procrustes problem; SCF orbital with its largest coefficient real positive\n");
    s.push_str(&format!(
        "threads = 1 (requested {})\n",
        requested_threads.map_or_else(|| "default".to_string(), |n| n.to_string())
    ));
    s.push_str("# versions\n");
    s.push_str(&format!("igapw = {}\n", env!("CARGO_PKG_VERSION")));
    s.push_str(&format!("target = {}-{}\n", std::env::consts::ARCH, std::env::consts::OS));
    s
}

/// Executes the sweep and writes `results.csv`, `meta.txt`, and per-point
/// traces (or SCF histories) into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path, requested_threads: Option<usize>) -> igapw::Result<RunOutcome> {
    fs::create_dir_all(out)?;
    fs::write(out.join("meta.txt"), meta_text(cfg, requested_threads))?;
    let mut solver = Solver::new(cfg)?;
    let (rk, rr, rp) = cfg.reference();
    let points = cfg.points();
    let mut sols = Vec::with_capacity(points.len() + 1);
    for &(k, r) in &points {
        sols.push(solver.solve(k, r, cfg.degree, Some(out))?);
    }
    let reference = match sols.iter().position(|s| is_same(s, rk, rr, rp)) {
        Some(i) => i,
        None => {
            sols.push(solver.solve(rk, rr, rp, Some(out))?);
            sols.len() - 1
        }
    };

    let mut outcome = RunOutcome::default();
    for (i, s) in sols.iter().enumerate() {
        if !s.converged {
            outcome.unconverged.push((s.cutoff, s.level));
        }
        if i >= points.len() && i != reference {
            continue;
        }
        let errs = if i == reference {
            vec![(0.0, 0.0, 0.0); s.eigenvalues.len()]
        } else {
            point_errors(s, &sols[reference])
        };
        for (j, &lambda) in s.eigenvalues.iter().enumerate() {
            outcome.rows.push(ResultRow {
                k: s.cutoff,
                r: s.level,
                h: s.disc.mesh_size(),
                p: s.degree,
                nev_index: j + 1,
                lambda,
                eig_error_vs_ref: errs[j].0,
                l2_error: errs[j].1,
                dg_error: errs[j].2,
                iters: s.iterations,
                cond_estimate: s.cond_estimate,
                wall_time: s.wall_time,
            });
        }
    }
    write_results(&out.join("results.csv"), &outcome.rows)?;

    if cfg.problem.nonlinear() {
        let mut energy = String::from("K,r,h,p,energy,lambda,scf_iters,converged,max_charge_defect\n");
        for s in &sols {
            let Some(scf) = &s.scf else { continue };
            let tag = format!("K{}_r{}_p{}", s.cutoff, s.level, s.degree);
            fs::write(out.join(format!("scf_{tag}.csv")), &scf.history_csv)?;
            energy.push_str(&format!(
                "{},{},{},{},{:.15e},{:.15e},{},{},{:.3e}\n",
                s.cutoff,
                s.level,
                s.disc.mesh_size(),
                s.degree,
                scf.energy,
                s.eigenvalues[0],
                scf.iterations,
                s.converged,
                scf.max_charge_defect
            ));
        }
        fs::write(out.join("energy.csv"), energy)?;
    }
    Ok(outcome)
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> igapw::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| igapw::Error::Format(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| igapw::Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
