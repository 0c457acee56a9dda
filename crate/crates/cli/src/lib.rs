//! Experiment driver for the hybrid spline / plane-wave discretization:
//! configuration files, parameter sweeps, reports and the preconditioner
//! benchmark.

pub mod bench;
pub mod config;
pub mod report;
pub mod runner;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NO_CONVERGENCE: i32 = 3;
}

/// Exit code of a library error.
pub fn exit_code(err: &igapw::Error) -> i32 {
    use igapw::Error as E;
    match err {
        E::NoConvergence { .. } | E::ScfNoConvergence { .. } => exit::NO_CONVERGENCE,
        E::InvalidParameter(_) | E::Geometry(_) | E::Aliasing { .. } | E::Unsupported(_) => exit::CONFIG,
        _ => exit::FAILURE,
    }
}
