//! 1-d inner solver in Lagrangian (quantile) variables.
//!
//! The density is represented by `K` equal-mass intervals with breakpoints
//! `X_0 <= ... <= X_K`; on interval `j` the density is `m / (X_{j+1} - X_j)`
//! with `m = 1/K`. In these variables:
//!
//! * the internal energy is `sum_j d_j f(m/d_j)` (convex in the spacings
//!   `d_j`),
//! * the metric term to the previous state is an exact quadrature of
//!   `int |X - G|^2 dm / (2 tau)` against the previous breakpoints `G`
//!   (the quantile map of `g` is piecewise linear in mass, so the
//!   per-interval Simpson rule `m (e0^2 + e0 e1 + e1^2)/3` is exact),
//! * on an interval with zero-boundary potential coupling the interaction
//!   energy has the closed form `-(chi/2) int (F - Fbar)^2 dt` in the CDF
//!   `F` (integrate `|u'|^2` by parts), which is an exact piecewise
//!   quadrature in the breakpoints. Straight lines in breakpoint space are
//!   displacement geodesics, every term above is convex along them, so the
//!   step objective is jointly convex and one projected-gradient solve
//!   suffices. Other couplings fall back to a damped frozen-potential
//!   fixed point.
//!
//! The cap `rho <= M` becomes the spacing bound `d_j >= m/M`, and the
//! projection onto `{spacing bound, X_0 >= a, X_K <= b}` is exact: after the
//! shift `Y_j = X_j - j m/M` the set is `{Y nondecreasing, a <= Y <= b - m K/M}`,
//! whose Euclidean projection is clamped isotonic regression.
//!
//! This solver resolves sub-cell displacements, which the atomic (cell
//! center to cell center) formulations cannot: when the true per-step
//! displacement is far below the grid spacing they stall, while here the
//! breakpoints move freely.

use crate::energy::{f_derivatives, psi_eval, EnergyReport, Nonlinearity};
use crate::grid::{total_mass, Coupling, DensityField, Grid};
use crate::pgd::{projected_bb, PgdOptions};
use crate::poisson::solve_potential;
use crate::transport::deposit_interval;
use crate::{Error, Result};

use super::JkoConfig;

const MAX_OUTER: usize = 80;

/// Breakpoint state threaded across steps of a 1-d flow.
#[derive(Debug, Clone)]
pub(crate) struct LagState {
    pub x: Vec<f64>,
    /// Mass of each of the `K = x.len() - 1` intervals.
    pub m: f64,
}

impl LagState {
    pub fn from_density(g: &DensityField, cfg: &JkoConfig) -> Self {
        let k = cfg
            .quantile_intervals
            .unwrap_or(4 * g.grid.num_cells())
            .max(8);
        let m = total_mass(g) / k as f64;
        LagState {
            x: quantile_positions(g, k),
            m,
        }
    }

    pub fn rebin(&self, grid: &Grid) -> Vec<f64> {
        rebin(&self.x, self.m, grid)
    }

    /// Max density `m / min spacing`.
    pub fn linf(&self) -> f64 {
        let dmin = self
            .x
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        self.m / dmin.max(1e-300)
    }

    /// Fraction of intervals pinned at the cap spacing.
    pub fn active_fraction(&self, cap: f64) -> f64 {
        if !cap.is_finite() {
            return 0.0;
        }
        let dcap = self.m / cap;
        let k = self.x.len() - 1;
        let active = self
            .x
            .windows(2)
            .filter(|w| w[1] - w[0] <= dcap * (1.0 + 1e-9))
            .count();
        active as f64 / k as f64
    }
}

/// Exact squared distance between two states on the same mass grid (the
/// monotone piecewise-linear map between breakpoints is optimal).
pub(crate) fn lag_w2_squared(a: &LagState, b: &LagState) -> f64 {
    let mut acc = 0.0;
    let k = a.x.len() - 1;
    for j in 0..k {
        let e0 = a.x[j] - b.x[j];
        let e1 = a.x[j + 1] - b.x[j + 1];
        acc += a.m / 3.0 * (e0 * e0 + e0 * e1 + e1 * e1);
    }
    acc
}

/// Free energy of a breakpoint state: exact internal term plus the exact
/// zero-boundary interaction (interval domains only).
pub(crate) fn lag_energy(
    state: &LagState,
    grid: &Grid,
    chi: f64,
    nl: &Nonlinearity,
) -> Result<EnergyReport> {
    let a = grid.domain.extent()[0][0];
    let b = grid.domain.extent()[0][1];
    let k = state.x.len() - 1;
    let m = state.m;
    let mut internal = 0.0;
    for j in 0..k {
        let d = state.x[j + 1] - state.x[j];
        if d <= 0.0 {
            return Err(Error::Parameter("degenerate breakpoint spacing".into()));
        }
        internal += d * f_derivatives(nl, m / d)?.0;
    }
    let interaction = if chi > 0.0 {
        DirichletGreen { chi, m, a, b }.energy(&state.x)
    } else {
        0.0
    };
    Ok(EnergyReport {
        internal,
        interaction,
        total: internal + interaction,
    })
}

/// One constrained step in breakpoint space: minimize
/// `J + W2^2(., g)/(2 tau)` from the previous breakpoints `gq`.
pub(crate) fn solve_state(
    gq: &LagState,
    grid: &Grid,
    cfg: &JkoConfig,
    nl: &Nonlinearity,
) -> Result<(LagState, usize, usize)> {
    let a = grid.domain.extent()[0][0];
    let b = grid.domain.extent()[0][1];
    let k = gq.x.len() - 1;
    let m = gq.m;

    let cap = cfg.cap();
    let tiny = 1e-9 * (b - a) / k as f64;
    let dmin = if cap.is_finite() {
        (m / cap).max(tiny)
    } else {
        tiny
    };
    if k as f64 * dmin > (b - a) * (1.0 + 1e-12) {
        return Err(Error::Parameter(format!(
            "cap {cap} is below the uniform density; the constrained step is infeasible"
        )));
    }

    if grid.domain.coupling == Coupling::Dirichlet || cfg.chi == 0.0 {
        solve_exact(gq, cfg, nl, dmin, a, b)
    } else {
        solve_frozen(gq, grid, cfg, nl, dmin, a, b)
    }
}

pub(super) fn solve(
    g: &DensityField,
    cfg: &JkoConfig,
    nl: &Nonlinearity,
) -> Result<(Vec<f64>, usize, usize)> {
    let gq = LagState::from_density(g, cfg);
    let (state, inner, outer) = solve_state(&gq, &g.grid, cfg, nl)?;
    Ok((state.rebin(&g.grid), inner, outer))
}

/// Convex path (zero-boundary coupling or `chi = 0`): exact interaction,
/// single projected-gradient solve, monotone safeguard against the start.
fn solve_exact(
    gq: &LagState,
    cfg: &JkoConfig,
    nl: &Nonlinearity,
    dmin: f64,
    a: f64,
    b: f64,
) -> Result<(LagState, usize, usize)> {
    let m = gq.m;
    let (chi, tau) = (cfg.chi, cfg.tau);
    let green = DirichletGreen { chi, m, a, b };
    let nl2 = nl.clone();
    let gq_ref = &gq.x;
    let objective = move |xv: &[f64]| -> f64 {
        let base = convex_base_objective(xv, gq_ref, m, tau, &nl2);
        if !base.is_finite() {
            return base;
        }
        base + if chi > 0.0 { green.energy(xv) } else { 0.0 }
    };
    let nl3 = nl.clone();
    let gradient = move |xv: &[f64], out: &mut [f64]| {
        convex_base_gradient(xv, gq_ref, m, tau, &nl3, out);
        if chi > 0.0 {
            green.add_gradient(xv, out);
        }
    };
    let project = move |xv: &mut [f64]| project_spacing(xv, dmin, a, b);

    let mut x0 = gq.x.clone();
    project(&mut x0);
    let start_obj = objective(&x0);

    let opts = PgdOptions {
        tol: cfg.inner_tol,
        max_iters: cfg.max_inner_iters,
        step0: cfg.tau.min(1.0),
    };
    let outcome = projected_bb(x0.clone(), &objective, &gradient, &project, &opts)?;
    // monotone safeguard: never report a state worse than staying put
    let x = if objective(&outcome.x) <= start_obj {
        outcome.x
    } else {
        x0
    };
    Ok((LagState { x, m }, outcome.iterations, 1))
}

/// Frozen-potential fixed point for couplings without a closed-form
/// interaction in breakpoint space.
fn solve_frozen(
    gq: &LagState,
    grid: &Grid,
    cfg: &JkoConfig,
    nl: &Nonlinearity,
    dmin: f64,
    a: f64,
    b: f64,
) -> Result<(LagState, usize, usize)> {
    let m = gq.m;
    let mut x = gq.x.clone();
    project_spacing(&mut x, dmin, a, b);

    let g0 = DensityField::new(grid.clone(), rebin(&gq.x, m, grid))?;
    let mut u_used = solve_potential(&g0)?.u.values;

    let opts = PgdOptions {
        tol: cfg.inner_tol * (1.0 + 1.0 / cfg.tau),
        max_iters: cfg.max_inner_iters,
        step0: cfg.tau.min(1.0),
    };

    let mut inner_total = 0usize;
    for outer in 1..=MAX_OUTER {
        let interp = Interp::new(grid, &u_used);
        let nl2 = nl.clone();
        let (chi, tau) = (cfg.chi, cfg.tau);
        let gq_ref = &gq.x;
        let interp_ref = &interp;
        let objective = move |xv: &[f64]| -> f64 {
            frozen_objective(xv, gq_ref, m, tau, chi, &nl2, interp_ref)
        };
        let nl3 = nl.clone();
        let gradient = move |xv: &[f64], out: &mut [f64]| {
            frozen_gradient(xv, gq_ref, m, tau, chi, &nl3, interp_ref, out);
        };
        let project = move |xv: &mut [f64]| project_spacing(xv, dmin, a, b);

        let outcome = projected_bb(x.clone(), &objective, &gradient, &project, &opts)?;
        x = outcome.x;
        inner_total += outcome.iterations;

        let vals = rebin(&x, m, grid);
        let rho = DensityField::new(grid.clone(), vals)?;
        let u_new = solve_potential(&rho)?.u.values;
        let du = u_new
            .iter()
            .zip(&u_used)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = u_new.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if du <= cfg.fixed_point_tol * (1.0 + scale) {
            return Ok((LagState { x, m }, inner_total, outer));
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

/// Exact interaction energy for `-u'' = rho`, `u(a) = u(b) = 0`: with CDF
/// `F`, one has `u' = Fbar - F` and the energy is
/// `-(chi/2) int_a^b (F - Fbar)^2 dt`, an exact quadrature for piecewise
/// linear `F`.
#[derive(Clone, Copy)]
struct DirichletGreen {
    chi: f64,
    m: f64,
    a: f64,
    b: f64,
}

impl DirichletGreen {
    /// `int F dt` and `int F^2 dt` over the whole interval.
    fn moments(&self, x: &[f64]) -> (f64, f64) {
        let k = x.len() - 1;
        let m = self.m;
        let total = m * k as f64;
        let mut int_f = (self.b - x[k]) * total;
        let mut int_f2 = (self.b - x[k]) * total * total;
        for j in 0..k {
            let d = x[j + 1] - x[j];
            let jf = j as f64;
            int_f += d * m * (jf + 0.5);
            int_f2 += d * m * m * (jf * jf + jf + 1.0 / 3.0);
        }
        (int_f, int_f2)
    }

    fn energy(&self, x: &[f64]) -> f64 {
        let len = self.b - self.a;
        let (int_f, int_f2) = self.moments(x);
        let fbar = int_f / len;
        -(self.chi / 2.0) * (int_f2 - len * fbar * fbar)
    }

    /// Accumulate the exact gradient: differentiating the quadrature (the
    /// `Fbar` variation drops since `int (F - Fbar) = 0`) gives, for an
    /// interior breakpoint, `dE/dX_j = chi m (m j - Fbar)` and one-sided
    /// analogues at the ends.
    fn add_gradient(&self, x: &[f64], out: &mut [f64]) {
        let k = x.len() - 1;
        let m = self.m;
        let len = self.b - self.a;
        let fbar = self.moments(x).0 / len;
        let c = self.chi * m;
        out[0] += -(self.chi / 2.0) * (m * fbar - m * m / 3.0);
        for (j, o) in out.iter_mut().enumerate().take(k).skip(1) {
            *o += c * (m * j as f64 - fbar);
        }
        out[k] +=
            -(self.chi / 2.0) * (m * fbar - m * m * (k as f64 - 1.0) - 2.0 * m * m / 3.0);
    }
}

/// Internal + metric terms (shared by the exact convex path).
fn convex_base_objective(x: &[f64], gq: &[f64], m: f64, tau: f64, nl: &Nonlinearity) -> f64 {
    let k = x.len() - 1;
    let mut acc = 0.0;
    for j in 0..k {
        let d = x[j + 1] - x[j];
        if d <= 0.0 {
            return f64::INFINITY;
        }
        match f_derivatives(nl, m / d) {
            Ok((f, _, _)) => acc += d * f,
            Err(_) => return f64::INFINITY,
        }
        let e0 = x[j] - gq[j];
        let e1 = x[j + 1] - gq[j + 1];
        acc += m / (6.0 * tau) * (e0 * e0 + e0 * e1 + e1 * e1);
    }
    acc
}

fn convex_base_gradient(
    x: &[f64],
    gq: &[f64],
    m: f64,
    tau: f64,
    nl: &Nonlinearity,
    out: &mut [f64],
) {
    let k = x.len() - 1;
    let psi: Vec<f64> = (0..k)
        .map(|j| {
            let d = (x[j + 1] - x[j]).max(1e-300);
            psi_eval(nl, m / d).unwrap_or(f64::INFINITY)
        })
        .collect();
    for (j, o) in out.iter_mut().enumerate() {
        let mut grad = 0.0;
        if j > 0 {
            grad -= psi[j - 1];
        }
        if j < k {
            grad += psi[j];
        }
        let e = x[j] - gq[j];
        if j > 0 {
            grad += m / (6.0 * tau) * (2.0 * e + (x[j - 1] - gq[j - 1]));
        }
        if j < k {
            grad += m / (6.0 * tau) * (2.0 * e + (x[j + 1] - gq[j + 1]));
        }
        *o = grad;
    }
}

/// Breakpoint positions of the quantile map of `g` at mass levels
/// `j * total/K`, `j = 0..=K`.
fn quantile_positions(g: &DensityField, k: usize) -> Vec<f64> {
    let grid = &g.grid;
    let n = grid.num_cells();
    let h = grid.spacing(0);
    let a = grid.domain.extent()[0][0];
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    let mut acc = 0.0;
    for i in 0..n {
        acc += g.values[i] * h;
        cum.push(acc);
    }
    let total = acc;
    let first = g.values.iter().position(|&v| v > 0.0).unwrap_or(0);
    let last = (0..n).rev().find(|&i| g.values[i] > 0.0).unwrap_or(n - 1);
    (0..=k)
        .map(|j| {
            if j == 0 {
                return a + first as f64 * h;
            }
            if j == k {
                return a + (last + 1) as f64 * h;
            }
            let q = j as f64 * total / k as f64;
            let i = cum.partition_point(|&c| c < q).saturating_sub(1).min(n - 1);
            let d = g.values[i];
            if d > 0.0 {
                (a + i as f64 * h + (q - cum[i]) / d).min(a + (i + 1) as f64 * h)
            } else {
                a + i as f64 * h
            }
        })
        .collect()
}

fn frozen_objective(
    x: &[f64],
    gq: &[f64],
    m: f64,
    tau: f64,
    chi: f64,
    nl: &Nonlinearity,
    interp: &Interp,
) -> f64 {
    let k = x.len() - 1;
    let mut internal = 0.0;
    let mut metric = 0.0;
    let mut inter = 0.0;
    for j in 0..k {
        let d = x[j + 1] - x[j];
        if d <= 0.0 {
            return f64::INFINITY;
        }
        let t = m / d;
        match f_derivatives(nl, t) {
            Ok((f, _, _)) => internal += d * f,
            Err(_) => return f64::INFINITY,
        }
        let e0 = x[j] - gq[j];
        let e1 = x[j + 1] - gq[j + 1];
        metric += m / (6.0 * tau) * (e0 * e0 + e0 * e1 + e1 * e1);
        if chi > 0.0 {
            inter -= chi * m * interp.eval(0.5 * (x[j] + x[j + 1]));
        }
    }
    internal + metric + inter
}

#[allow(clippy::too_many_arguments)]
fn frozen_gradient(
    x: &[f64],
    gq: &[f64],
    m: f64,
    tau: f64,
    chi: f64,
    nl: &Nonlinearity,
    interp: &Interp,
    out: &mut [f64],
) {
    let k = x.len() - 1;
    // Psi(m/d) per interval; derivative of d f(m/d) in d is -Psi(m/d)
    let psi: Vec<f64> = (0..k)
        .map(|j| {
            let d = (x[j + 1] - x[j]).max(1e-300);
            psi_eval(nl, m / d).unwrap_or(f64::INFINITY)
        })
        .collect();
    for j in 0..=k {
        let mut grad = 0.0;
        // internal energy
        if j > 0 {
            grad -= psi[j - 1];
        }
        if j < k {
            grad += psi[j];
        }
        // metric
        let e = x[j] - gq[j];
        if j > 0 {
            grad += m / (6.0 * tau) * (2.0 * e + (x[j - 1] - gq[j - 1]));
        }
        if j < k {
            grad += m / (6.0 * tau) * (2.0 * e + (x[j + 1] - gq[j + 1]));
        }
        // frozen interaction through the interval midpoints
        if chi > 0.0 {
            if j > 0 {
                grad -= 0.5 * chi * m * interp.deriv(0.5 * (x[j - 1] + x[j]));
            }
            if j < k {
                grad -= 0.5 * chi * m * interp.deriv(0.5 * (x[j] + x[j + 1]));
            }
        }
        out[j] = grad;
    }
}

/// Euclidean projection onto `{x_{j+1} - x_j >= dmin, lo <= x_0, x_K <= hi}`
/// via shifted isotonic regression with uniform box clamping.
fn project_spacing(x: &mut [f64], dmin: f64, lo: f64, hi: f64) {
    let k = x.len() - 1;
    let upper = hi - k as f64 * dmin;
    let mut y: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(j, v)| v - j as f64 * dmin)
        .collect();
    pava(&mut y);
    for (j, v) in y.iter().enumerate() {
        x[j] = v.clamp(lo, upper.max(lo)) + j as f64 * dmin;
    }
}

/// Pool-adjacent-violators: in-place L2 projection onto nondecreasing
/// sequences (uniform weights).
fn pava(y: &mut [f64]) {
    let n = y.len();
    // blocks of (mean, count)
    let mut mean = Vec::with_capacity(n);
    let mut count: Vec<usize> = Vec::with_capacity(n);
    for &v in y.iter() {
        mean.push(v);
        count.push(1);
        while mean.len() >= 2 && mean[mean.len() - 2] > mean[mean.len() - 1] {
            let (m2, c2) = (mean.pop().unwrap(), count.pop().unwrap());
            let l = mean.len() - 1;
            let c1 = count[l];
            mean[l] = (mean[l] * c1 as f64 + m2 * c2 as f64) / (c1 + c2) as f64;
            count[l] = c1 + c2;
        }
    }
    let mut pos = 0;
    for (m, c) in mean.into_iter().zip(count) {
        for v in &mut y[pos..pos + c] {
            *v = m;
        }
        pos += c;
    }
}

/// Re-bin the equal-mass-interval representation onto the grid,
/// conserving mass exactly.
fn rebin(x: &[f64], m: f64, grid: &Grid) -> Vec<f64> {
    let n = grid.num_cells();
    let h = grid.spacing(0);
    let a = grid.domain.extent()[0][0];
    let mut mass = vec![0.0; n];
    for j in 0..x.len() - 1 {
        deposit_interval(&mut mass, m, x[j], x[j + 1], a, h, n);
    }
    mass.into_iter().map(|mm| mm / h).collect()
}

/// Piecewise-linear interpolant of cell-centered potential values with a
/// coupling-aware boundary extension: Dirichlet pins the boundary value to
/// zero, the no-flux variants extend flat.
struct Interp {
    xs: Vec<f64>,
    vs: Vec<f64>,
}

impl Interp {
    fn new(grid: &Grid, u: &[f64]) -> Self {
        let n = grid.num_cells();
        let a = grid.domain.extent()[0][0];
        let b = grid.domain.extent()[0][1];
        let mut xs = Vec::with_capacity(n + 2);
        let mut vs = Vec::with_capacity(n + 2);
        let dirichlet = grid.domain.coupling == Coupling::Dirichlet;
        xs.push(a);
        vs.push(if dirichlet { 0.0 } else { u[0] });
        for i in 0..n {
            xs.push(grid.axis_center(0, i));
            vs.push(u[i]);
        }
        xs.push(b);
        vs.push(if dirichlet { 0.0 } else { u[n - 1] });
        Interp { xs, vs }
    }

    fn segment(&self, x: f64) -> usize {
        match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(self.xs.len() - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(self.xs.len() - 2),
        }
    }

    fn eval(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let w = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        let w = w.clamp(0.0, 1.0);
        (1.0 - w) * self.vs[i] + w * self.vs[i + 1]
    }

    fn deriv(&self, x: f64) -> f64 {
        let i = self.segment(x);
        (self.vs[i + 1] - self.vs[i]) / (self.xs[i + 1] - self.xs[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, DomainSpec};

    #[test]
    fn pava_examples() {
        let mut y = vec![1.0, 3.0, 2.0, 4.0];
        pava(&mut y);
        assert_eq!(y, vec![1.0, 2.5, 2.5, 4.0]);
        let mut z = vec![3.0, 2.0, 1.0];
        pava(&mut z);
        assert_eq!(z, vec![2.0, 2.0, 2.0]);
        let mut w = vec![1.0, 2.0, 3.0];
        pava(&mut w);
        assert_eq!(w, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn projection_enforces_constraints_and_is_idempotent() {
        let mut x = vec![0.9, 0.1, 0.5, 0.45, 1.4];
        project_spacing(&mut x, 0.05, 0.0, 1.0);
        for j in 0..4 {
            assert!(x[j + 1] - x[j] >= 0.05 - 1e-12);
        }
        assert!(x[0] >= -1e-12 && x[4] <= 1.0 + 1e-12);
        let y = x.clone();
        project_spacing(&mut x, 0.05, 0.0, 1.0);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn quantile_positions_of_uniform_are_equispaced() {
        let d = DomainSpec::interval(0.0, 2.0, Coupling::Dirichlet).unwrap();
        let g = DensityField::uniform(build_grid(d, 25).unwrap());
        let q = quantile_positions(&g, 10);
        for (j, v) in q.iter().enumerate() {
            assert!((v - 0.2 * j as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn rebin_conserves_mass_and_recovers_uniform() {
        let d = DomainSpec::interval(0.0, 1.0, Coupling::Dirichlet).unwrap();
        let grid = build_grid(d, 20).unwrap();
        let k = 40;
        let x: Vec<f64> = (0..=k).map(|j| j as f64 / k as f64).collect();
        let vals = rebin(&x, 1.0 / k as f64, &grid);
        for v in &vals {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn interaction_gradient_matches_finite_differences() {
        let k = 12;
        let m = 1.0 / k as f64;
        let green = DirichletGreen {
            chi: 1.7,
            m,
            a: 0.0,
            b: 2.0,
        };
        // irregular but increasing breakpoints inside (0, 2)
        let x: Vec<f64> = (0..=k)
            .map(|j| {
                let t = j as f64 / k as f64;
                0.1 + 1.6 * t + 0.08 * (6.0 * t).sin()
            })
            .collect();
        let mut grad = vec![0.0; k + 1];
        green.add_gradient(&x, &mut grad);
        let h = 1e-6;
        for j in 0..=k {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (green.energy(&xp) - green.energy(&xm)) / (2.0 * h);
            assert!(
                (grad[j] - fd).abs() < 1e-8 * (1.0 + fd.abs()),
                "j={j}: analytic {} fd {}",
                grad[j],
                fd
            );
        }
    }

    #[test]
    fn lagrangian_energy_matches_cell_energy_on_smooth_density() {
        use crate::energy::total_energy;
        let d = DomainSpec::interval(0.0, 1.0, Coupling::Dirichlet).unwrap();
        let grid = build_grid(d, 200).unwrap();
        let g = DensityField::from_fn(grid.clone(), |x| {
            1.0 + 0.5 * (std::f64::consts::PI * x[0]).sin()
        })
        .unwrap()
        .normalized()
        .unwrap();
        let nl = Nonlinearity::Entropy;
        let mut cfg = JkoConfig::new(2.0, 1e-3).unwrap();
        cfg.quantile_intervals = Some(1600);
        let st = LagState::from_density(&g, &cfg);
        let lag = lag_energy(&st, &grid, cfg.chi, &nl).unwrap();
        let cell = total_energy(&g, &nl, cfg.chi).unwrap();
        assert!(
            (lag.internal - cell.internal).abs() < 5e-4,
            "internal {} vs {}",
            lag.internal,
            cell.internal
        );
        assert!(
            (lag.interaction - cell.interaction).abs() < 5e-4,
            "interaction {} vs {}",
            lag.interaction,
            cell.interaction
        );
    }
}
