//! Experiment configuration.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! line    := blank | comment | entry
//! comment := '#' anything
//! entry   := key '=' value [comment]
//! value   := item (',' item)*
//! ```
//!
//! Keys are unique; unknown keys are rejected. Lists are comma separated.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use igapw::eigensolve::PrecondKind;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("key '{key}': {msg}")]
    Value { key: String, msg: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Problem {
    Example1,
    Example2,
    Example3,
    Example4,
    FreeParticle,
    Custom,
}

impl Problem {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Example1 => "example1",
            Self::Example2 => "example2",
            Self::Example3 => "example3",
            Self::Example4 => "example4",
            Self::FreeParticle => "free_particle",
            Self::Custom => "custom",
        }
    }

    /// Whether the problem is solved by SCF.
    pub fn nonlinear(self) -> bool {
        matches!(self, Self::Example3 | Self::Example4)
    }
}

impl FromStr for Problem {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "example1" => Self::Example1,
            "example2" => Self::Example2,
            "example3" => Self::Example3,
            "example4" => Self::Example4,
            "free_particle" => Self::FreeParticle,
            "custom" => Self::Custom,
            _ => return Err(format!("unknown problem '{s}'")),
        })
    }
}

/// How the cutoff and refinement lists combine into sweep points.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sweep {
    /// Every `(K, r)` pair.
    Product,
    /// `(K_i, r_i)` pairwise; both lists have equal length.
    Zip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CondMode {
    Off,
    On,
    /// Only for systems with at most [`CONDITION_AUTO_LIMIT`] unknowns.
    Auto,
}

pub const CONDITION_AUTO_LIMIT: usize = 2500;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub dim: usize,
    pub length: f64,
    pub patch_half_width: f64,
    /// Nuclear charge of the custom problem.
    pub charge: f64,
    pub cutoffs: Vec<usize>,
    /// Refinement levels, `h = 0.4 / 2^r`.
    pub levels: Vec<u32>,
    pub sweep: Sweep,
    pub degree: usize,
    pub c_sigma: f64,
    /// Ewald splitting parameter.
    pub alpha: f64,
    /// Reciprocal cutoff of the Ewald sum; converged when absent.
    pub g_cut: Option<f64>,
    pub n_grid: Option<usize>,
    pub cheb_degree: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
    pub nev: usize,
    pub precond: PrecondKind,
    pub seed: u64,
    pub output: PathBuf,
    pub reference_cutoff: Option<usize>,
    pub reference_level: Option<u32>,
    pub reference_degree: Option<usize>,
    /// Exponent of `h ∼ K^{-α}` for the multiscale check.
    pub alpha_scale: Option<f64>,
    pub cond_estimate: CondMode,
    pub scf_theta: f64,
    pub scf_tol: f64,
    pub scf_max_iter: usize,
    pub export_matrices: bool,
    pub cache_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: Problem::Example1,
            dim: 2,
            length: 4.0,
            patch_half_width: 0.2,
            charge: 1.0,
            cutoffs: vec![20],
            levels: vec![3],
            sweep: Sweep::Product,
            degree: 1,
            c_sigma: 10.0,
            alpha: 5.0,
            g_cut: None,
            n_grid: None,
            cheb_degree: None,
            tol: 1e-8,
            max_iter: 3000,
            nev: 4,
            precond: PrecondKind::TbDg,
            seed: 7,
            output: PathBuf::from("out"),
            reference_cutoff: None,
            reference_level: None,
            reference_degree: None,
            alpha_scale: None,
            cond_estimate: CondMode::Auto,
            scf_theta: 0.5,
            scf_tol: 1e-8,
            scf_max_iter: 200,
            export_matrices: false,
            cache_dir: None,
        }
    }
}

const KEYS: &[&str] = &[
    "problem",
    "dim",
    "length",
    "patch_half_width",
    "charge",
    "cutoffs",
    "levels",
    "sweep",
    "degree",
    "c_sigma",
    "alpha",
    "g_cut",
    "n_grid",
    "cheb_degree",
    "tol",
    "max_iter",
    "nev",
    "precond",
    "seed",
    "output",
    "reference_cutoff",
    "reference_level",
    "reference_degree",
    "alpha_scale",
    "cond_estimate",
    "scf_theta",
    "scf_tol",
    "scf_max_iter",
    "export_matrices",
    "cache_dir",
];

/// Splits the text into raw `key -> value` pairs.
pub fn parse_entries(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((k, v)) = body.split_once('=') else {
            return Err(ConfigError::Syntax {
                line,
                msg: "expected 'key = value'".into(),
            });
        };
        let key = k.trim();
        let value = v.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(ConfigError::Syntax {
                line,
                msg: format!("invalid key '{key}'"),
            });
        }
        if value.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                msg: format!("empty value for '{key}'"),
            });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::Syntax {
                line,
                msg: format!("unknown key '{key}'"),
            });
        }
        if out.insert(key.to_string(), value.to_string()).is_some() {
            return Err(ConfigError::Syntax {
                line,
                msg: format!("duplicate key '{key}'"),
            });
        }
    }
    Ok(out)
}

fn scalar<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| ConfigError::Value {
        key: key.into(),
        msg: format!("'{v}': {e}"),
    })
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.split(',').map(|s| scalar(key, s.trim())).collect()
}

fn flag(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "on" => Ok(true),
        "false" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::Value {
            key: key.into(),
            msg: format!("'{v}' is not a boolean"),
        }),
    }
}

impl ExperimentConfig {
    /// Parses and validates a configuration. Absent keys take the defaults
    /// of the chosen problem.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let e = parse_entries(text)?;
        let problem: Problem = match e.get("problem") {
            Some(v) => v.parse().map_err(|msg| ConfigError::Value { key: "problem".into(), msg })?,
            None => Problem::Example1,
        };
        let mut c = Self::preset(problem);
        for (k, v) in &e {
            let v = v.as_str();
            match k.as_str() {
                "problem" => {}
                "dim" => c.dim = scalar(k, v)?,
                "length" => c.length = scalar(k, v)?,
                "patch_half_width" => c.patch_half_width = scalar(k, v)?,
                "charge" => c.charge = scalar(k, v)?,
                "cutoffs" => c.cutoffs = list(k, v)?,
                "levels" => c.levels = list(k, v)?,
                "sweep" => {
                    c.sweep = match v {
                        "product" => Sweep::Product,
                        "zip" => Sweep::Zip,
                        _ => return Err(ConfigError::Value { key: k.clone(), msg: format!("'{v}' is not product or zip") }),
                    }
                }
                "degree" => c.degree = scalar(k, v)?,
                "c_sigma" => c.c_sigma = scalar(k, v)?,
                "alpha" => c.alpha = scalar(k, v)?,
                "g_cut" => c.g_cut = Some(scalar(k, v)?),
                "n_grid" => c.n_grid = Some(scalar(k, v)?),
                "cheb_degree" => c.cheb_degree = Some(scalar(k, v)?),
                "tol" => c.tol = scalar(k, v)?,
                "max_iter" => c.max_iter = scalar(k, v)?,
                "nev" => c.nev = scalar(k, v)?,
                "precond" => c.precond = v.parse().map_err(|e: igapw::Error| ConfigError::Value { key: k.clone(), msg: e.to_string() })?,
                "seed" => c.seed = scalar(k, v)?,
                "output" => c.output = PathBuf::from(v),
                "reference_cutoff" => c.reference_cutoff = Some(scalar(k, v)?),
                "reference_level" => c.reference_level = Some(scalar(k, v)?),
                "reference_degree" => c.reference_degree = Some(scalar(k, v)?),
                "alpha_scale" => c.alpha_scale = Some(scalar(k, v)?),
                "cond_estimate" => {
                    c.cond_estimate = match v {
                        "auto" => CondMode::Auto,
                        _ if flag(k, v)? => CondMode::On,
                        _ => CondMode::Off,
                    }
                }
                "scf_theta" => c.scf_theta = scalar(k, v)?,
                "scf_tol" => c.scf_tol = scalar(k, v)?,
                "scf_max_iter" => c.scf_max_iter = scalar(k, v)?,
                "export_matrices" => c.export_matrices = flag(k, v)?,
                "cache_dir" => c.cache_dir = Some(PathBuf::from(v)),
                _ => unreachable!("keys are checked while splitting"),
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Defaults of a problem.
    pub fn preset(problem: Problem) -> Self {
        let base = Self {
            problem,
            ..Self::default()
        };
        match problem {
            Problem::Example1 | Problem::Example2 => Self { g_cut: Some(2.0), ..base },
            Problem::Example3 => Self {
                g_cut: Some(2.0),
                nev: 1,
                tol: 1e-10,
                ..base
            },
            Problem::Example4 => Self {
                dim: 3,
                charge: 2.0,
                nev: 1,
                tol: 1e-10,
                cutoffs: vec![10],
                levels: vec![2],
                scf_tol: 1e-7,
                ..base
            },
            Problem::FreeParticle => Self {
                cutoffs: vec![8],
                levels: vec![2],
                degree: 2,
                nev: 5,
                ..base
            },
            Problem::Custom => base,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        if !(2..=3).contains(&self.dim) {
            errs.push(format!("dim = {} must be 2 or 3", self.dim));
        }
        if matches!(self.problem, Problem::Example1 | Problem::Example2 | Problem::Example3) && self.dim != 2 {
            errs.push(format!("{} is two-dimensional", self.problem.as_str()));
        }
        if self.problem == Problem::Example4 && self.dim != 3 {
            errs.push("example4 is three-dimensional".into());
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            errs.push("length must be positive".into());
        }
        if !(self.patch_half_width > 0.0 && 2.0 * self.patch_half_width < self.length) {
            errs.push("patch_half_width must be positive and the patch must fit in the cell".into());
        }
        if self.cutoffs.is_empty() || self.levels.is_empty() {
            errs.push("cutoffs and levels must be non-empty".into());
        }
        if self.cutoffs.iter().any(|&k| k == 0 || k > 64) {
            errs.push("cutoffs must lie in 1..=64".into());
        }
        if self.levels.iter().any(|&r| r > 10) {
            errs.push("levels must lie in 0..=10".into());
        }
        if self.sweep == Sweep::Zip && self.cutoffs.len() != self.levels.len() {
            errs.push("zip sweep needs equally long cutoffs and levels".into());
        }
        if !(1..=5).contains(&self.degree) || self.reference_degree.is_some_and(|p| !(1..=5).contains(&p)) {
            errs.push("spline degrees must lie in 1..=5".into());
        }
        if !(self.c_sigma > 0.0 && self.c_sigma.is_finite()) {
            errs.push("c_sigma must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) || self.g_cut.is_some_and(|g| !(g >= 0.0 && g.is_finite())) {
            errs.push("alpha must be positive and g_cut non-negative".into());
        }
        if self.n_grid.is_some_and(|n| !(8..=4096).contains(&n)) || self.cheb_degree.is_some_and(|n| !(2..=256).contains(&n)) {
            errs.push("n_grid must lie in 8..=4096 and cheb_degree in 2..=256".into());
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            errs.push("tol and max_iter must be positive".into());
        }
        if self.nev == 0 {
            errs.push("nev must be at least 1".into());
        }
        if self.problem.nonlinear() && self.nev != 1 {
            errs.push("the nonlinear problems compute one orbital (nev = 1)".into());
        }
        if !(self.scf_theta > 0.0 && self.scf_theta < 1.0) {
            errs.push(format!("scf_theta = {} outside (0, 1)", self.scf_theta));
        }
        if !(self.scf_tol > 0.0) || self.scf_max_iter == 0 {
            errs.push("scf_tol and scf_max_iter must be positive".into());
        }
        if self.alpha_scale.is_some_and(|a| !(a > 0.0 && a < 3.0)) {
            errs.push("alpha_scale must lie in (0, 3)".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs.join("; ")))
        }
    }

    /// Sweep points `(K, r)` in configuration order.
    pub fn points(&self) -> Vec<(usize, u32)> {
        match self.sweep {
            Sweep::Zip => self.cutoffs.iter().copied().zip(self.levels.iter().copied()).collect(),
            Sweep::Product => self.levels.iter().flat_map(|&r| self.cutoffs.iter().map(move |&k| (k, r))).collect(),
        }
    }

    /// The reference point `(K, r, p)`: configured, or the finest sweep point.
    pub fn reference(&self) -> (usize, u32, usize) {
        let finest = self.points().into_iter().max_by_key(|&(k, r)| (r, k)).unwrap_or((self.cutoffs[0], self.levels[0]));
        (
            self.reference_cutoff.unwrap_or(finest.0),
            self.reference_level.unwrap_or(finest.1),
            self.reference_degree.unwrap_or(self.degree),
        )
    }

    /// Fully resolved configuration in the input grammar.
    pub fn to_text(&self) -> String {
        fn join<T: ToString>(v: &[T]) -> String {
            v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
        }
        let (rk, rr, rp) = self.reference();
        let mut s = String::new();
        let _ = writeln!(s, "problem = {}", self.problem.as_str());
        let _ = writeln!(s, "dim = {}", self.dim);
        let _ = writeln!(s, "length = {}", self.length);
        let _ = writeln!(s, "patch_half_width = {}", self.patch_half_width);
        let _ = writeln!(s, "charge = {}", self.charge);
        let _ = writeln!(s, "cutoffs = {}", join(&self.cutoffs));
        let _ = writeln!(s, "levels = {}", join(&self.levels));
        let _ = writeln!(s, "sweep = {}", if self.sweep == Sweep::Zip { "zip" } else { "product" });
        let _ = writeln!(s, "degree = {}", self.degree);
        let _ = writeln!(s, "c_sigma = {}", self.c_sigma);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        if let Some(g) = self.g_cut {
            let _ = writeln!(s, "g_cut = {g}");
        }
        if let Some(n) = self.n_grid {
            let _ = writeln!(s, "n_grid = {n}");
        }
        if let Some(n) = self.cheb_degree {
            let _ = writeln!(s, "cheb_degree = {n}");
        }
        let _ = writeln!(s, "tol = {:e}", self.tol);
        let _ = writeln!(s, "max_iter = {}", self.max_iter);
        let _ = writeln!(s, "nev = {}", self.nev);
        let _ = writeln!(s, "precond = {}", self.precond.as_str());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "output = {}", self.output.display());
        let _ = writeln!(s, "reference_cutoff = {rk}");
        let _ = writeln!(s, "reference_level = {rr}");
        let _ = writeln!(s, "reference_degree = {rp}");
        if let Some(a) = self.alpha_scale {
            let _ = writeln!(s, "alpha_scale = {a}");
        }
        let cond = match self.cond_estimate {
            CondMode::Auto => "auto",
            CondMode::On => "true",
            CondMode::Off => "false",
        };
        let _ = writeln!(s, "cond_estimate = {cond}");
        let _ = writeln!(s, "scf_theta = {}", self.scf_theta);
        let _ = writeln!(s, "scf_tol = {:e}", self.scf_tol);
        let _ = writeln!(s, "scf_max_iter = {}", self.scf_max_iter);
        let _ = writeln!(s, "export_matrices = {}", self.export_matrices);
        if let Some(d) = &self.cache_dir {
            let _ = writeln!(s, "cache_dir = {}", d.display());
        }
        s
    }
}
