//! Independent oracles: an explicit finite-volume solver for the PDE, the
//! zero-diffusion growth envelope for the maximum, a brute-force step
//! minimizer, and density comparison helpers.
//!
//! These deliberately share no numerics with the variational solvers: the
//! finite-volume scheme discretizes the flux form `chi rho grad u -
//! grad Psi(rho)` directly, and the brute-force minimizer is multi-start
//! projected descent on the raw step objective with exact transport.

use crate::energy::{psi_eval, psi_prime, Nonlinearity};
use crate::grid::{DensityField, Grid};
use crate::jko::{step_objective, JkoConfig};
use crate::pgd::{projected_bb, PgdOptions};
use crate::poisson::solve_potential;
use crate::transport::phi_cell_averages;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct FvConfig {
    pub dt: f64,
    /// Fraction of the stability limit the step must stay below, in (0, 1].
    pub cfl_safety: f64,
}

impl FvConfig {
    pub fn new(dt: f64, cfl_safety: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Parameter(format!("dt={dt} must be > 0")));
        }
        if !(cfl_safety > 0.0 && cfl_safety <= 1.0) {
            return Err(Error::Parameter(format!(
                "cfl_safety={cfl_safety} must be in (0, 1]"
            )));
        }
        Ok(FvConfig { dt, cfl_safety })
    }
}

/// One explicit conservative update: upwind flux for the drift
/// `chi rho grad u`, centered flux for `grad Psi(rho)`, zero flux through
/// the domain boundary (periodic domains wrap instead). The potential is
/// re-solved from the current density (quasi-static coupling).
pub fn fv_explicit_step(
    rho: &DensityField,
    cfg: &FvConfig,
    chi: f64,
    nl: &Nonlinearity,
) -> Result<DensityField> {
    let grid = rho.grid.clone();
    let dim = grid.dim();
    let n = grid.n();
    let periodic = grid.domain.coupling == crate::grid::Coupling::Periodic;

    let u = if chi > 0.0 {
        solve_potential(rho)?.u.values
    } else {
        vec![0.0; grid.num_cells()]
    };
    let psi: Vec<f64> = rho
        .values
        .iter()
        .map(|&v| psi_eval(nl, v))
        .collect::<Result<_>>()?;

    // stability bound: dt <= cfl * min(h^2/(2 d max Psi'), h/(2 max |v|))
    let mut max_psi_p = 0.0f64;
    for &v in &rho.values {
        max_psi_p = max_psi_p.max(psi_prime(nl, v)?);
    }
    let mut max_speed = 0.0f64;
    let mut limit = f64::INFINITY;
    for axis in 0..dim {
        let h = grid.spacing(axis);
        if max_psi_p > 0.0 {
            limit = limit.min(h * h / (2.0 * dim as f64 * max_psi_p));
        }
        for_each_face(&grid, axis, periodic, |l, r| {
            let v = chi * (u[r] - u[l]) / h;
            max_speed = max_speed.max(v.abs());
        });
        if max_speed > 0.0 {
            limit = limit.min(h / (2.0 * max_speed));
        }
    }
    if cfg.dt > cfg.cfl_safety * limit {
        return Err(Error::Parameter(format!(
            "dt={} violates the stability limit {:.3e} (safety {})",
            cfg.dt,
            cfg.cfl_safety * limit,
            cfg.cfl_safety
        )));
    }

    let mut new = rho.values.clone();
    for axis in 0..dim {
        let h = grid.spacing(axis);
        for_each_face(&grid, axis, periodic, |l, r| {
            let v = chi * (u[r] - u[l]) / h;
            let upwind = if v > 0.0 { rho.values[l] } else { rho.values[r] };
            let flux = v * upwind - (psi[r] - psi[l]) / h;
            new[l] -= cfg.dt / h * flux;
            new[r] += cfg.dt / h * flux;
        });
    }
    let _ = n;
    DensityField::new(grid, new.iter().map(|v| v.max(0.0)).collect())
}

/// Interior (and, on periodic domains, wrap-around) faces along one axis.
fn for_each_face(grid: &Grid, axis: usize, periodic: bool, mut f: impl FnMut(usize, usize)) {
    let n = grid.n();
    match grid.dim() {
        1 => {
            for i in 0..n - 1 {
                f(i, i + 1);
            }
            if periodic {
                f(n - 1, 0);
            }
        }
        2 => {
            for iy in 0..n {
                for ix in 0..n {
                    let here = grid.flat(ix, iy);
                    let next = match axis {
                        0 if ix + 1 < n => Some(grid.flat(ix + 1, iy)),
                        0 if periodic => Some(grid.flat(0, iy)),
                        1 if iy + 1 < n => Some(grid.flat(ix, iy + 1)),
                        1 if periodic => Some(grid.flat(ix, 0)),
                        _ => None,
                    };
                    if let Some(next) = next {
                        f(here, next);
                    }
                }
            }
        }
        _ => unreachable!(),
    }
}

/// Evolve by repeated explicit steps up to time `t` (the last step is
/// shortened to land on `t` exactly).
pub fn fv_evolve(
    rho0: &DensityField,
    cfg: &FvConfig,
    chi: f64,
    nl: &Nonlinearity,
    t: f64,
) -> Result<DensityField> {
    if !(t >= 0.0) {
        return Err(Error::Parameter(format!("t={t} must be >= 0")));
    }
    let mut rho = rho0.clone();
    let mut elapsed = 0.0;
    while elapsed < t - 1e-15 {
        let dt = cfg.dt.min(t - elapsed);
        let step = FvConfig { dt, ..*cfg };
        rho = fv_explicit_step(&rho, &step, chi, nl)?;
        elapsed += dt;
    }
    Ok(rho)
}

/// Growth envelope of the maximum for the drift-only dynamics:
/// `m(t) = m0 / (1 - chi m0 t)`, valid strictly before the pole.
pub fn zero_diffusion_linf(m0: f64, chi: f64, t: f64) -> Result<f64> {
    if !(m0 > 0.0) || !(chi >= 0.0) || !(t >= 0.0) {
        return Err(Error::Parameter(
            "zero_diffusion_linf requires m0 > 0, chi >= 0, t >= 0".into(),
        ));
    }
    let denom = 1.0 - chi * m0 * t;
    if denom <= 0.0 {
        return Err(Error::BlowupHorizon {
            t,
            horizon: 1.0 / (chi * m0),
        });
    }
    Ok(m0 / denom)
}

/// Exhaustive small-instance minimizer of the step objective
/// `J(rho) + W2^2(rho, g)/(2 tau)` over the capped simplex: multi-start
/// projected descent with exact transport in every evaluation.
/// Deterministic (fixed internal seed).
pub fn brute_force_jko(
    g: &DensityField,
    cfg: &JkoConfig,
    nl: &Nonlinearity,
) -> Result<(DensityField, f64)> {
    let grid = g.grid.clone();
    let n = grid.num_cells();
    if n > 16 {
        return Err(Error::Size(format!(
            "brute-force minimizer accepts at most 16 cells, got {n}"
        )));
    }
    let vol = grid.cell_volume();
    let cap = cfg.cap();

    let objective = |v: &[f64]| -> f64 {
        match DensityField::new(grid.clone(), v.to_vec())
            .and_then(|rho| step_objective(&rho, g, cfg, nl))
        {
            Ok(val) => val,
            Err(_) => f64::INFINITY,
        }
    };
    let gradient = |v: &[f64], out: &mut [f64]| {
        let rho = DensityField::new(grid.clone(), v.iter().map(|x| x.max(0.0)).collect())
            .expect("feasible iterate");
        let u = solve_potential(&rho).expect("potential on iterate").u;
        let phi = crate::jko::exact_transport(&rho, g, cfg)
            .and_then(|r| phi_cell_averages(&r))
            .expect("transport on iterate");
        for i in 0..v.len() {
            let t = v[i].max(1e-18);
            let (_, fp, _) =
                crate::energy::f_derivatives(nl, t).expect("derivative on iterate");
            out[i] = vol * (fp - cfg.chi * u.values[i] + phi[i] / cfg.tau);
        }
    };
    let project =
        |v: &mut [f64]| crate::jko::eulerian_project(v, vol, cap);

    let opts = PgdOptions {
        tol: cfg.inner_tol * vol * (1.0 + 1.0 / cfg.tau),
        max_iters: cfg.max_inner_iters,
        step0: cfg.tau / vol,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x9e3779b97f4a7c15);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in 0..20 {
        let x0: Vec<f64> = if start == 0 {
            g.values.clone()
        } else {
            (0..n).map(|_| rng.gen_range(0.05..2.0)).collect()
        };
        let outcome = match projected_bb(x0, &objective, &gradient, &project, &opts) {
            Ok(o) => o,
            Err(_) => continue,
        };
        if best.as_ref().map_or(true, |(_, f)| outcome.objective < *f) {
            best = Some((outcome.x, outcome.objective));
        }
    }
    let (x, obj) = best.ok_or(Error::Solver {
        residual: f64::NAN,
        iters: 20,
    })?;
    Ok((DensityField::new(grid, x)?, obj))
}

/// `sum |a - b| h^d` on a common grid.
pub fn compare_l1(a: &DensityField, b: &DensityField) -> Result<f64> {
    if !a.grid.same_geometry(&b.grid) {
        return Err(Error::GridMismatch);
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        * a.grid.cell_volume())
}
