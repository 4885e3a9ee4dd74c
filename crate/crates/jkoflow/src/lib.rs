//! Numerical solver and verification harness for density-constrained JKO
//! (minimizing-movement) discretizations of parabolic-elliptic Keller-Segel
//! systems.
//!
//! The library is organized around one pipeline:
//!
//! | module      | responsibility                                                    |
//! |-------------|-------------------------------------------------------------------|
//! | [`grid`]    | domains, uniform cell-centered grids, density / scalar fields      |
//! | [`energy`]  | internal-energy nonlinearities, free energy, KL proximal maps      |
//! | [`poisson`] | chemoattractant potential solves for every boundary coupling       |
//! | [`transport`] | exact and entropic optimal transport between grid densities      |
//! | [`jko`]     | the constrained minimizing-movement step, flow driver, monitors    |
//! | [`reference`] | independent cross-checks: explicit FV solver, brute-force steps  |
//! | [`cli`]     | config parsing, run/validate/sweep commands, CSV/JSON outputs      |
//!
//! Densities are cell-averaged finite-volume values: the mass of a field is
//! `sum(values) * cell_volume`, and the discrete L-infinity norm is the
//! maximum cell average. All floating point state is `f64` and every public
//! solver is deterministic for fixed inputs.

pub mod cli;
pub mod energy;
pub mod fixtures;
pub mod grid;
pub mod jko;
pub mod poisson;
pub mod reference;
pub mod transport;

mod pgd;

use thiserror::Error;

/// Crate-wide error type. Solver failures carry the residual that refused to
/// converge so callers can log or escalate with context.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid resolution: need at least 2 cells per axis, got {0}")]
    InvalidResolution(usize),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("mass mismatch: {0} vs {1} exceeds tolerance")]
    MassMismatch(f64, f64),
    #[error("solver did not converge: residual {residual:e} after {iters} iterations")]
    Solver { residual: f64, iters: usize },
    #[error("instance too large: {0}")]
    Size(String),
    #[error("parameter out of range: {0}")]
    Parameter(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("requested time {t} is at or beyond the blow-up horizon {horizon}")]
    BlowupHorizon { t: f64, horizon: f64 },
    #[error("step {k} failed: {source}")]
    Step {
        k: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
