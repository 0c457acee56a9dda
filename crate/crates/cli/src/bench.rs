//! Preconditioner comparison on the first sweep point of a configuration.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use igapw::eigensolve::{condition_estimate, solve_lowest, PrecondKind, SolverOptions};
use igapw::problem::elements_for_level;

use crate::config::{CondMode, ExperimentConfig, CONDITION_AUTO_LIMIT};
use crate::runner::build_model;

/// Residual level at which iterations are counted.
pub const BENCH_RESIDUAL: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub precond: PrecondKind,
    pub cond_estimate: f64,
    /// `None` when the level was never reached.
    pub iters_to_level: Option<usize>,
    pub setup_time: f64,
    pub solve_time: f64,
    pub eigenvalues: Vec<f64>,
    pub converged: bool,
}

pub const KINDS: [PrecondKind; 3] = [PrecondKind::None, PrecondKind::Jacobi, PrecondKind::TbDg];

/// Solves the first sweep point once per preconditioner and writes
/// `bench.csv` plus one `trace_<precond>.csv` per solve.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> igapw::Result<Vec<BenchRow>> {
    fs::create_dir_all(out)?;
    let (k, r) = cfg.points()[0];
    let model = build_model(cfg)?;
    let disc = model.discretize(k, cfg.degree, elements_for_level(r), cfg.c_sigma)?;
    let table = match &cfg.cache_dir {
        Some(d) => model.v_out_cached(k, d)?,
        None => model.v_out(k)?,
    };
    let sys = model.assemble(&disc, &table)?;
    let n = sys.dofs.total();
    let want_cond = match cfg.cond_estimate {
        CondMode::On => true,
        CondMode::Off => false,
        CondMode::Auto => n <= CONDITION_AUTO_LIMIT,
    };
    let opts = SolverOptions {
        nev: cfg.nev,
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        seed: cfg.seed,
        ..SolverOptions::default()
    };
    let mut rows = Vec::new();
    for kind in KINDS {
        let t0 = Instant::now();
        let precond = kind.build(&sys, 0.0)?;
        let setup_time = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let sol = solve_lowest(&sys, precond.as_ref(), &opts, None)?;
        let solve_time = t1.elapsed().as_secs_f64();
        sol.write_trace(BufWriter::new(File::create(out.join(format!("trace_{}.csv", kind.as_str())))?))?;
        let cond_estimate = if want_cond {
            condition_estimate(&sys, precond.as_ref(), 0.0)?
        } else {
            f64::NAN
        };
        log::info!("{}: {} iterations, {solve_time:.2} s", kind.as_str(), sol.iterations);
        rows.push(BenchRow {
            precond: kind,
            cond_estimate,
            iters_to_level: sol.iterations_to(BENCH_RESIDUAL),
            setup_time,
            solve_time,
            eigenvalues: sol.eigenvalues,
            converged: sol.converged,
        });
    }
    fs::write(out.join("bench.csv"), render_csv(&rows))?;
    Ok(rows)
}

pub fn render_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("precond,cond_estimate,iters_to_1e-5,setup_time,solve_time,lambda_1,converged\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:e},{},{:.3},{:.3},{:.15e},{}\n",
            r.precond.as_str(),
            r.cond_estimate,
            r.iters_to_level.map_or_else(String::new, |i| i.to_string()),
            r.setup_time,
            r.solve_time,
            r.eigenvalues.first().copied().unwrap_or(f64::NAN),
            r.converged
        ));
    }
    s
}
