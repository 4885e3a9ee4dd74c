//! Entropic-transport proximal splitting, the inner solver for 2-d grids.
//!
//! With the potential frozen, the step is
//!
//! ```text
//!   min_P  eps KL(P | K) + 2 tau F(P 1)    s.t.  P^T 1 = g,
//! ```
//!
//! where `K = exp(-C/eps)` and `F` collects the internal energy, the linear
//! frozen interaction, and the cap indicator. Alternating dual updates are
//! closed-form on the `g` marginal and reduce to the cell-wise KL proximal
//! map of `gamma f + cap` (with `gamma = 2 tau / eps` and the interaction
//! tilt folded into the prox target) on the free marginal. Runs in the log
//! domain with epsilon annealing.

use crate::energy::{kl_prox_cell_logq, Nonlinearity};
use crate::grid::DensityField;
use crate::poisson::solve_potential;
use crate::{Error, Result};

use super::JkoConfig;

const MAX_OUTER: usize = 60;

pub(super) fn solve(
    g: &DensityField,
    cfg: &JkoConfig,
    nl: &Nonlinearity,
) -> Result<(Vec<f64>, usize, usize)> {
    let grid = g.grid.clone();
    let n = grid.num_cells();
    let vol = grid.cell_volume();
    let eps = cfg.entropic_eps_for(&grid);
    let cap = cfg.cap();

    // columns: support of g; rows: every cell (mass may spread anywhere)
    let cols: Vec<usize> = (0..n).filter(|&j| g.values[j] > 0.0).collect();
    if cols.is_empty() {
        return Err(Error::Domain("cannot step a zero density".into()));
    }
    let b_log: Vec<f64> = cols.iter().map(|&j| (g.values[j] * vol).ln()).collect();
    let m = cols.len();
    let mut cost = vec![0.0; n * m];
    for i in 0..n {
        let xi = grid.center(i);
        for (jj, &j) in cols.iter().enumerate() {
            let yj = grid.center(j);
            cost[i * m + jj] = xi
                .iter()
                .zip(&yj)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
    }
    let max_cost = cost.iter().fold(0.0f64, |a, v| a.max(*v));

    let mut u_used = vec![0.0; n];
    if cfg.chi > 0.0 {
        u_used = solve_potential(g)?.u.values;
    }

    let mut stages = vec![eps];
    let mut e = eps;
    while e < max_cost / 8.0 {
        e *= 4.0;
        stages.push(e);
    }
    stages.reverse();

    let mut rho = g.values.clone();
    let mut inner_total = 0usize;
    for outer in 1..=MAX_OUTER {
        // log-domain duals, reset per outer pass
        let mut beta = vec![0.0; m];
        let mut log_a = vec![0.0; n]; // alpha / eps
        for (si, &se) in stages.iter().enumerate() {
            let last_stage = si + 1 == stages.len();
            let budget = if last_stage { cfg.max_inner_iters } else { 400 };
            let gamma = 2.0 * cfg.tau / se;
            let mut prev_rho = rho.clone();
            let mut it = 0usize;
            loop {
                // exact g-marginal update
                for (jj, lb) in b_log.iter().enumerate() {
                    let mut mx = f64::NEG_INFINITY;
                    for i in 0..n {
                        let v = log_a[i] - cost[i * m + jj] / se;
                        if v > mx {
                            mx = v;
                        }
                    }
                    let mut s = 0.0;
                    for i in 0..n {
                        s += (log_a[i] - cost[i * m + jj] / se - mx).exp();
                    }
                    beta[jj] = se * (lb - mx - s.ln());
                }
                // free-marginal prox update
                for i in 0..n {
                    let mut mx = f64::NEG_INFINITY;
                    for jj in 0..m {
                        let v = (beta[jj] - cost[i * m + jj]) / se;
                        if v > mx {
                            mx = v;
                        }
                    }
                    let log_q_mass = if mx.is_finite() {
                        let mut s = 0.0;
                        for jj in 0..m {
                            s += ((beta[jj] - cost[i * m + jj]) / se - mx).exp();
                        }
                        mx + s.ln()
                    } else {
                        f64::NEG_INFINITY
                    };
                    if log_q_mass < -700.0 {
                        rho[i] = 0.0;
                        log_a[i] = -1e18;
                        continue;
                    }
                    let log_q_dens =
                        log_q_mass - vol.ln() + 2.0 * cfg.tau * cfg.chi * u_used[i] / se;
                    let s = kl_prox_cell_logq(log_q_dens, gamma, nl, cap)?;
                    rho[i] = s;
                    log_a[i] = if s > 0.0 {
                        (s * vol).ln() - log_q_mass
                    } else {
                        -1e18
                    };
                }
                it += 1;
                inner_total += 1;
                let diff = rho
                    .iter()
                    .zip(&prev_rho)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                let scale = rho.iter().fold(0.0f64, |a, v| a.max(*v)).max(1e-30);
                if diff <= cfg.inner_tol * scale || it >= budget {
                    if last_stage && it >= budget && diff > 100.0 * cfg.inner_tol * scale {
                        return Err(Error::Solver {
                            residual: diff / scale,
                            iters: inner_total,
                        });
                    }
                    break;
                }
                prev_rho.copy_from_slice(&rho);
            }
        }

        if cfg.chi == 0.0 {
            return Ok((rho, inner_total, outer));
        }
        let field = DensityField::new(
            grid.clone(),
            rho.iter().map(|v| v.max(0.0)).collect(),
        )?
        .normalized()?;
        let u_new = solve_potential(&field)?.u.values;
        let du = u_new
            .iter()
            .zip(&u_used)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = u_new.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if du <= cfg.fixed_point_tol * (1.0 + scale) {
            return Ok((rho, inner_total, outer));
        }
        for (uu, un) in u_used.iter_mut().zip(&u_new) {
            *uu += cfg.damping * (un - *uu);
        }
    }
    Err(Error::Solver {
        residual: f64::NAN,
        iters: MAX_OUTER,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{jko_step, JkoConfig, StepMethod};
    use crate::energy::Nonlinearity;
    use crate::grid::{build_grid, linf_norm, total_mass, Coupling, DensityField, DomainSpec};

    fn grid_2d(n: usize) -> crate::grid::Grid {
        let d = DomainSpec::new(vec![[0.0, 1.0], [0.0, 1.0]], Coupling::Dirichlet).unwrap();
        build_grid(d, n).unwrap()
    }

    #[test]
    fn two_d_diffusion_step_flattens() {
        let grid = grid_2d(8);
        let g = DensityField::from_fn(grid, |x| {
            1.0 + 0.8 * (-((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)) / 0.02).exp()
        })
        .unwrap()
        .normalized()
        .unwrap();
        let mut cfg = JkoConfig::new(0.0, 0.01).unwrap();
        cfg.method = StepMethod::EntropicSplitting;
        cfg.inner_tol = 1e-10;
        let nl = Nonlinearity::Entropy;
        let (rho, report) = jko_step(&g, &cfg, &nl).unwrap();
        assert!(report.mass_defect.abs() < 1e-9);
        assert!((total_mass(&rho) - 1.0).abs() < 1e-9);
        let (mx, _) = linf_norm(&rho);
        let (mg, _) = linf_norm(&g);
        assert!(mx < mg, "diffusion must lower the peak: {mx} vs {mg}");
    }

    #[test]
    fn two_d_chemotaxis_respects_cap_and_monitor() {
        let grid = grid_2d(8);
        let g = DensityField::from_fn(grid, |x| {
            1.0 + 0.5 * (-((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)) / 0.05).exp()
        })
        .unwrap()
        .normalized()
        .unwrap();
        let mut cfg = JkoConfig::new(2.0, 5e-3).unwrap();
        cfg.method = StepMethod::EntropicSplitting;
        let nl = Nonlinearity::Entropy;
        let (rho, report) = jko_step(&g, &cfg, &nl).unwrap();
        let (mx, _) = linf_norm(&rho);
        assert!(mx <= cfg.cap() + 1e-12);
        assert!(report.monitor_pass);
    }
}
