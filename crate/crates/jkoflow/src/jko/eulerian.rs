//! Direct inner solver on cell densities, for small grids.
//!
//! Minimizes the full step objective `J(rho) + W2^2(rho, g)/(2 tau)` over
//! the capped simplex `{rho >= 0, rho <= M, sum rho vol = 1}` by projected
//! descent. The potential is re-solved inside every objective and gradient
//! evaluation, so (unlike the splitting solvers) nothing is frozen: the
//! discrete Green identity makes the interaction gradient exactly
//! `-chi u`, and the metric gradient is the cell-averaged Kantorovich
//! potential over `tau`. Intended as the slow, transparent path that the
//! brute-force oracle can be compared against cell for cell.

use crate::energy::{f_derivatives, total_energy, Nonlinearity};
use crate::grid::DensityField;
use crate::pgd::{projected_bb, PgdOptions};
use crate::transport::phi_cell_averages;
use crate::{Error, Result};

use super::{exact_transport, JkoConfig};

pub(super) fn solve(
    g: &DensityField,
    cfg: &JkoConfig,
    nl: &Nonlinearity,
) -> Result<(Vec<f64>, usize, usize)> {
    let grid = g.grid.clone();
    let n = grid.num_cells();
    if n > 64 {
        return Err(Error::Size("direct solver accepts at most 64 cells".into()));
    }
    let vol = grid.cell_volume();
    let cap = cfg.cap();
    if cap * vol * (n as f64) < 1.0 - 1e-12 {
        return Err(Error::Parameter(format!(
            "cap {cap} is below the uniform density; the constrained step is infeasible"
        )));
    }

    let objective = |v: &[f64]| -> f64 {
        let rho = match DensityField::new(grid.clone(), v.to_vec()) {
            Ok(r) => r,
            Err(_) => return f64::INFINITY,
        };
        let energy = match total_energy(&rho, nl, cfg.chi) {
            Ok(e) => e.total,
            Err(_) => return f64::INFINITY,
        };
        let w2 = match exact_transport(&rho, g, cfg) {
            Ok(r) => r.w2_squared,
            Err(_) => return f64::INFINITY,
        };
        energy + w2 / (2.0 * cfg.tau)
    };

    let gradient = |v: &[f64], out: &mut [f64]| {
        let rho = DensityField::new(
            grid.clone(),
            v.iter().map(|x| x.max(0.0)).collect(),
        )
        .expect("projected iterate is a valid density");
        let u = crate::poisson::solve_potential(&rho)
            .expect("potential solve on iterate")
            .u;
        let phi = exact_transport(&rho, g, cfg)
            .and_then(|r| phi_cell_averages(&r))
            .expect("transport on iterate");
        for i in 0..v.len() {
            // entropy-type laws have f'(0) = -inf; the floor keeps the
            // gradient finite while still pushing hard away from zero
            let t = v[i].max(1e-18);
            let (_, fp, _) = f_derivatives(nl, t).expect("derivative on iterate");
            out[i] = vol * (fp - cfg.chi * u.values[i] + phi[i] / cfg.tau);
        }
    };

    let project = |v: &mut [f64]| capped_simplex_project(v, vol, cap);

    let opts = PgdOptions {
        tol: cfg.inner_tol * vol * (1.0 + 1.0 / cfg.tau),
        max_iters: cfg.max_inner_iters,
        step0: cfg.tau / vol,
    };
    let outcome = projected_bb(g.values.clone(), &objective, &gradient, &project, &opts)?;
    Ok((outcome.x, outcome.iterations, 1))
}

/// Euclidean projection onto `{0 <= v <= cap, sum v vol = 1}` by bisection
/// on the simplex shift.
pub(crate) fn capped_simplex_project(v: &mut [f64], vol: f64, cap: f64) {
    let target = 1.0 / vol;
    let clamped_sum = |shift: f64, v: &[f64]| -> f64 {
        v.iter().map(|x| (x - shift).clamp(0.0, cap)).sum()
    };
    let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - target;
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        let fill = (target / v.len() as f64).min(cap);
        for x in v.iter_mut() {
            *x = fill;
        }
        return;
    }
    // sum is nonincreasing in shift; widen until bracketed
    while clamped_sum(lo, v) < target {
        lo -= (hi - lo).abs().max(1.0);
    }
    while clamped_sum(hi, v) > target {
        hi += (hi - lo).abs().max(1.0);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clamped_sum(mid, v) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let shift = 0.5 * (lo + hi);
    for x in v.iter_mut() {
        *x = (*x - shift).clamp(0.0, cap);
    }
}
