use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use igapw_cli::config::ExperimentConfig;
use igapw_cli::{bench, exit, exit_code, report, runner};

#[derive(Parser)]
#[command(name = "igapw", version, about = "Hybrid spline / plane-wave eigenvalue experiments")]
struct Cli {
    /// Experiment configuration (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output` of the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `seed` of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Recorded in meta.txt; the solvers run on one thread.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep and write results.csv and meta.txt.
    Run,
    /// Summarize results.csv of a finished run.
    Report,
    /// Compare preconditioners on the first sweep point.
    PrecondBench,
    /// Delete cached interstitial potential tables.
    CacheClear,
}

const DEFAULT_CACHE: &str = ".igapw-cache";

fn load(cli: &Cli) -> Result<ExperimentConfig, i32> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                eprintln!("error: cannot read {}: {e}", path.display());
                exit::CONFIG
            })?;
            ExperimentConfig::parse(&text).map_err(|e| {
                eprintln!("error: {}: {e}", path.display());
                exit::CONFIG
            })?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn fail(err: igapw::Error) -> i32 {
    eprintln!("error: {err}");
    exit_code(&err)
}

fn dispatch(cli: &Cli) -> i32 {
    let cfg = match load(cli) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match cli.command {
        Command::Run => match runner::run(&cfg, &cfg.output, cli.threads) {
            Ok(outcome) if outcome.unconverged.is_empty() => {
                println!("{} rows written to {}", outcome.rows.len(), cfg.output.join("results.csv").display());
                exit::SUCCESS
            }
            Ok(outcome) => {
                eprintln!("error: no convergence at (K, r) = {:?}", outcome.unconverged);
                exit::NO_CONVERGENCE
            }
            Err(e) => fail(e),
        },
        Command::Report => {
            let text = match std::fs::read_to_string(cfg.output.join("results.csv")) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", cfg.output.join("results.csv").display());
                    return exit::FAILURE;
                }
            };
            let rows = match report::parse_results(&text) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return exit::FAILURE;
                }
            };
            let meta = std::fs::read_to_string(cfg.output.join("meta.txt")).map(|m| report::parse_meta(&m)).unwrap_or_default();
            let alpha = meta.get("alpha_scale").and_then(|v| v.parse().ok()).or(cfg.alpha_scale);
            let text = report::render(&report::analyse(&rows, alpha));
            print!("{text}");
            match std::fs::write(cfg.output.join("report.txt"), text) {
                Ok(()) => exit::SUCCESS,
                Err(e) => fail(e.into()),
            }
        }
        Command::PrecondBench => match bench::run(&cfg, &cfg.output) {
            Ok(rows) => {
                print!("{}", bench::render_csv(&rows));
                if rows.iter().all(|r| r.converged) {
                    exit::SUCCESS
                } else {
                    exit::NO_CONVERGENCE
                }
            }
            Err(e) => fail(e),
        },
        Command::CacheClear => {
            let dir = cfg.cache_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE));
            match igapw::cache::clear(&dir) {
                Ok(n) => {
                    println!("removed {n} cache files from {}", dir.display());
                    exit::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    ExitCode::from(dispatch(&cli) as u8)
}
