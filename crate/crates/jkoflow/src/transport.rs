//! Optimal transport between grid densities.
//!
//! Three methods with different exactness/scalability trade-offs:
//!
//! * [`w2_quantile_1d`]: exact squared Wasserstein distance between two 1-d
//!   piecewise-constant densities via piecewise-linear CDF composition, O(n).
//!   This is the continuum distance of the finite-volume reconstruction, so
//!   it resolves sub-cell displacements exactly.
//! * [`lp_transport_oracle`]: exact linear program on cell-center atoms
//!   (transportation simplex), restricted to small instances. On 1-d inputs
//!   it computes the atomic distance, which agrees with the quantile value
//!   exactly when the optimal rearrangement is locally rigid (translations,
//!   block swaps) and to O(h^2) otherwise.
//! * [`sinkhorn_entropic`]: log-domain Sinkhorn iteration with
//!   epsilon-annealing and a debiased (Sinkhorn divergence) cost.
//!
//! Costs are squared Euclidean, `|x - y|^2`. Kantorovich potentials follow
//! the `|x - y|^2 / 2` convention in which the optimal map is `x - grad phi`,
//! anchored by `phi(left boundary) = 0` in 1-d and a zero-mean gauge
//! otherwise.

use crate::grid::{DensityField, Grid, ScalarField};
use crate::{Error, Result};

mod lp;
pub(crate) use lp::transport_simplex;

/// Relative tolerance on total-mass agreement between the two marginals.
const MASS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Quantile,
    Lp,
    Sinkhorn,
}

/// One monotone piece of the 1-d quantile coupling: the mass fraction
/// `mass` moves from the source interval `[s0, s1]` (inside `src_cell`)
/// to the target interval `[t0, t1]` (inside `dst_cell`), linearly in mass.
#[derive(Debug, Clone, Copy)]
pub struct MassSegment {
    pub mass: f64,
    pub src_cell: usize,
    pub dst_cell: usize,
    pub s0: f64,
    pub s1: f64,
    pub t0: f64,
    pub t1: f64,
}

#[derive(Debug, Clone)]
pub enum PlanRepr {
    /// Exact 1-d quantile coupling.
    Segments(Vec<MassSegment>),
    /// Sparse list of (source cell, target cell, mass).
    Sparse(Vec<(usize, usize, f64)>),
}

#[derive(Debug, Clone)]
pub struct TransportResult {
    pub method: Method,
    pub w2_squared: f64,
    /// Barycentric target position per source cell (1-d only for quantile;
    /// per-axis flattened for plans, see [`barycentric_map`]).
    pub map_t: Option<Vec<f64>>,
    pub plan: PlanRepr,
    /// Kantorovich potential on the source grid (cost `|x-y|^2/2`).
    pub phi: ScalarField,
    pub marginal_defect: f64,
    pub(crate) src_grid: Grid,
    pub(crate) phi_cell_avg: Option<Vec<f64>>,
}

/// Piecewise-linear CDF of a 1-d density, in mass coordinates.
struct Side {
    edges: Vec<f64>,
    cum: Vec<f64>,
    dens: Vec<f64>,
}

fn side_of(rho: &DensityField) -> Side {
    let g = &rho.grid;
    let n = g.n();
    let h = g.spacing(0);
    let a = g.domain.extent()[0][0];
    let mut edges = Vec::with_capacity(n + 1);
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    for i in 0..=n {
        edges.push(a + i as f64 * h);
    }
    let mut acc = 0.0;
    for i in 0..n {
        acc += rho.values[i] * h;
        cum.push(acc);
    }
    Side {
        edges,
        cum,
        dens: rho.values.clone(),
    }
}

impl Side {
    /// Position at cumulative mass q inside cell i.
    fn pos(&self, i: usize, q: f64) -> f64 {
        let d = self.dens[i];
        if d <= 0.0 {
            self.edges[i]
        } else {
            (self.edges[i] + (q - self.cum[i]) / d).min(self.edges[i + 1])
        }
    }
}

fn check_1d(rho: &DensityField) -> Result<()> {
    if rho.grid.dim() != 1 {
        return Err(Error::Domain("quantile transport requires 1-d fields".into()));
    }
    Ok(())
}

/// Build the exact monotone coupling between two 1-d densities on the
/// common mass grid of their CDF breakpoints.
fn mass_segments(rho: &DensityField, g: &DensityField) -> Result<Vec<MassSegment>> {
    let sr = side_of(rho);
    let sg = side_of(g);
    let (mr, mg) = (*sr.cum.last().unwrap(), *sg.cum.last().unwrap());
    if (mr - mg).abs() > MASS_TOL * mr.abs().max(mg.abs()).max(1.0) {
        return Err(Error::MassMismatch(mr, mg));
    }
    let total = mr.min(mg);
    let eps = total * 1e-15;

    let (nr, ng) = (sr.dens.len(), sg.dens.len());
    let mut segments = Vec::new();
    let mut q = 0.0;
    let mut i = 0usize;
    let mut j = 0usize;
    loop {
        while i < nr && sr.cum[i + 1] <= q + eps {
            i += 1;
        }
        while j < ng && sg.cum[j + 1] <= q + eps {
            j += 1;
        }
        if i >= nr || j >= ng || q >= total - eps {
            break;
        }
        let q1 = sr.cum[i + 1].min(sg.cum[j + 1]).min(total);
        if q1 > q + eps {
            segments.push(MassSegment {
                mass: q1 - q,
                src_cell: i,
                dst_cell: j,
                s0: sr.pos(i, q),
                s1: sr.pos(i, q1),
                t0: sg.pos(j, q),
                t1: sg.pos(j, q1),
            });
        }
        q = q1;
    }
    Ok(segments)
}

/// Exact piecewise potential generated by a monotone 1-d map: knots of
/// `(x, T(x))` with rigid extension outside the support, giving a
/// piecewise-quadratic `phi` with `phi' = x - T(x)` and `phi(a) = 0`.
pub(crate) struct PotentialCurve {
    xs: Vec<f64>,
    ws: Vec<f64>,
    phis: Vec<f64>,
}

impl PotentialCurve {
    fn from_segments(segments: &[MassSegment], grid: &Grid) -> Self {
        let a = grid.domain.extent()[0][0];
        let b = grid.domain.extent()[0][1];
        let span = b - a;
        let mut knots: Vec<(f64, f64)> = Vec::with_capacity(2 * segments.len() + 2);
        if segments.is_empty() {
            knots.push((a, a));
            knots.push((b, b));
        } else {
            let first = &segments[0];
            let last = &segments[segments.len() - 1];
            knots.push((a, first.t0 - (first.s0 - a)));
            for seg in segments {
                knots.push((seg.s0, seg.t0));
                knots.push((seg.s1, seg.t1));
            }
            knots.push((b, last.t1 + (b - last.s1)));
        }
        let mut xs = Vec::with_capacity(knots.len());
        let mut ws = Vec::with_capacity(knots.len());
        for (x, t) in knots {
            if let Some(&lx) = xs.last() {
                if x <= lx + 1e-15 * span {
                    continue;
                }
            }
            xs.push(x);
            ws.push(x - t);
        }
        let mut phis = vec![0.0; xs.len()];
        for k in 1..xs.len() {
            let dx = xs[k] - xs[k - 1];
            phis[k] = phis[k - 1] + 0.5 * (ws[k] + ws[k - 1]) * dx;
        }
        PotentialCurve { xs, ws, phis }
    }

    fn segment_index(&self, x: f64) -> usize {
        match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(k) => k.min(self.xs.len() - 2),
            Err(0) => 0,
            Err(k) => (k - 1).min(self.xs.len() - 2),
        }
    }

    pub(crate) fn eval(&self, x: f64) -> f64 {
        let k = self.segment_index(x);
        let dx = self.xs[k + 1] - self.xs[k];
        let t = x - self.xs[k];
        let slope = (self.ws[k + 1] - self.ws[k]) / dx;
        self.phis[k] + self.ws[k] * t + 0.5 * slope * t * t
    }

    /// Exact integral of the piecewise-quadratic potential over `[p, q]`.
    pub(crate) fn integral(&self, p: f64, q: f64) -> f64 {
        if !(q > p) {
            return 0.0;
        }
        let mut acc = 0.0;
        let mut lo = p;
        loop {
            let k = self.segment_index(lo);
            let mut hi = self.xs[k + 1].min(q);
            if hi <= lo {
                // past the last knot (a boundary knot may be merged away by
                // the dedup): finish with the local quadratic extension
                hi = q;
            }
            let mid = 0.5 * (lo + hi);
            // Simpson is exact for quadratics.
            acc += (hi - lo) / 6.0 * (self.eval(lo) + 4.0 * self.eval(mid) + self.eval(hi));
            if hi >= q {
                return acc;
            }
            lo = hi;
        }
    }
}

/// Exact 1-d squared Wasserstein distance via quantile composition, with the
/// monotone coupling, barycentric map, and Kantorovich potential.
pub fn w2_quantile_1d(rho: &DensityField, g: &DensityField) -> Result<TransportResult> {
    check_1d(rho)?;
    check_1d(g)?;
    let segments = mass_segments(rho, g)?;

    let mut w2 = 0.0;
    for seg in &segments {
        let d0 = seg.s0 - seg.t0;
        let d1 = seg.s1 - seg.t1;
        w2 += seg.mass / 3.0 * (d0 * d0 + d0 * d1 + d1 * d1);
    }

    let grid = rho.grid.clone();
    let n = grid.num_cells();
    let h = grid.spacing(0);
    let mut tbar_num = vec![0.0; n];
    let mut cell_mass = vec![0.0; n];
    for seg in &segments {
        tbar_num[seg.src_cell] += seg.mass * 0.5 * (seg.t0 + seg.t1);
        cell_mass[seg.src_cell] += seg.mass;
    }
    let map_t: Vec<f64> = (0..n)
        .map(|i| {
            if cell_mass[i] > 0.0 {
                tbar_num[i] / cell_mass[i]
            } else {
                grid.axis_center(0, i)
            }
        })
        .collect();

    let curve = PotentialCurve::from_segments(&segments, &grid);
    let phi_vals: Vec<f64> = (0..n).map(|i| curve.eval(grid.axis_center(0, i))).collect();
    let a = grid.domain.extent()[0][0];
    let phi_avg: Vec<f64> = (0..n)
        .map(|i| {
            let lo = a + i as f64 * h;
            curve.integral(lo, lo + h) / h
        })
        .collect();

    let defect = (crate::grid::total_mass(rho) - crate::grid::total_mass(g)).abs();
    Ok(TransportResult {
        method: Method::Quantile,
        w2_squared: w2,
        map_t: Some(map_t),
        plan: PlanRepr::Segments(segments),
        phi: ScalarField::new(grid.clone(), phi_vals)?,
        marginal_defect: defect,
        src_grid: grid,
        phi_cell_avg: Some(phi_avg),
    })
}

/// Kantorovich potential of a 1-d transport result: `phi' = x - T(x)`
/// integrated from the left boundary with `phi(left) = 0`.
pub fn kantorovich_potential_1d(res: &TransportResult) -> Result<ScalarField> {
    if res.src_grid.dim() != 1 {
        return Err(Error::Domain("potential integration requires 1-d".into()));
    }
    match (&res.plan, &res.map_t) {
        (PlanRepr::Segments(_), _) => Ok(res.phi.clone()),
        (_, Some(map_t)) => {
            let grid = &res.src_grid;
            let n = grid.num_cells();
            let h = grid.spacing(0);
            let w: Vec<f64> = (0..n).map(|i| grid.axis_center(0, i) - map_t[i]).collect();
            let mut phi = vec![0.0; n];
            phi[0] = w[0] * 0.5 * h;
            for i in 1..n {
                phi[i] = phi[i - 1] + 0.5 * (w[i - 1] + w[i]) * h;
            }
            ScalarField::new(grid.clone(), phi)
        }
        _ => Err(Error::Domain("transport result has no map".into())),
    }
}

/// Cell-averaged Kantorovich potential (exact for quantile results); used by
/// optimality monitors where the cell average, not the center sample, is the
/// discrete gradient of the metric term.
pub(crate) fn phi_cell_averages(res: &TransportResult) -> Result<Vec<f64>> {
    if let Some(avg) = &res.phi_cell_avg {
        return Ok(avg.clone());
    }
    Ok(res.phi.values.clone())
}

/// Exact transportation-simplex LP on cell-center atoms. Limited to 64 cells
/// per marginal.
pub fn lp_transport_oracle(rho: &DensityField, g: &DensityField) -> Result<TransportResult> {
    for (name, f) in [("source", rho), ("target", g)] {
        if f.grid.num_cells() > 64 {
            return Err(Error::Size(format!(
                "{name} has {} cells; the LP oracle accepts at most 64",
                f.grid.num_cells()
            )));
        }
    }
    let vol_r = rho.grid.cell_volume();
    let vol_g = g.grid.cell_volume();
    let (mr, mg) = (crate::grid::total_mass(rho), crate::grid::total_mass(g));
    if (mr - mg).abs() > MASS_TOL * mr.abs().max(mg.abs()).max(1.0) {
        return Err(Error::MassMismatch(mr, mg));
    }

    // Compress away zero-mass cells.
    let src_idx: Vec<usize> = (0..rho.grid.num_cells())
        .filter(|&i| rho.values[i] > 0.0)
        .collect();
    let dst_idx: Vec<usize> = (0..g.grid.num_cells())
        .filter(|&j| g.values[j] > 0.0)
        .collect();
    if src_idx.is_empty() || dst_idx.is_empty() {
        return Err(Error::Domain("cannot transport a zero density".into()));
    }
    let supply: Vec<f64> = src_idx.iter().map(|&i| rho.values[i] * vol_r).collect();
    let scale = supply.iter().sum::<f64>()
        / dst_idx.iter().map(|&j| g.values[j] * vol_g).sum::<f64>();
    let demand: Vec<f64> = dst_idx
        .iter()
        .map(|&j| g.values[j] * vol_g * scale)
        .collect();

    let src_pos: Vec<Vec<f64>> = src_idx.iter().map(|&i| rho.grid.center(i)).collect();
    let dst_pos: Vec<Vec<f64>> = dst_idx.iter().map(|&j| g.grid.center(j)).collect();
    let sq = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    let mut cost = vec![0.0; supply.len() * demand.len()];
    for (ii, sp) in src_pos.iter().enumerate() {
        for (jj, dp) in dst_pos.iter().enumerate() {
            cost[ii * demand.len() + jj] = sq(sp, dp);
        }
    }

    let (w2, flows, duals_u, _duals_v) = transport_simplex(&supply, &demand, &cost)?;

    let mut plan = Vec::with_capacity(flows.len());
    for (ii, jj, f) in &flows {
        if *f > 0.0 {
            plan.push((src_idx[*ii], dst_idx[*jj], *f));
        }
    }

    // Barycentric map on the source grid (1-d only; per-axis otherwise).
    let map_t = if rho.grid.dim() == 1 {
        let n = rho.grid.num_cells();
        let mut num = vec![0.0; n];
        let mut den = vec![0.0; n];
        for (i, j, f) in &plan {
            num[*i] += f * g.grid.center(*j)[0];
            den[*i] += f;
        }
        Some(
            (0..n)
                .map(|i| {
                    if den[i] > 0.0 {
                        num[i] / den[i]
                    } else {
                        rho.grid.axis_center(0, i)
                    }
                })
                .collect(),
        )
    } else {
        None
    };

    // Half-cost potential from the LP row duals, zero-mean on the support.
    let n = rho.grid.num_cells();
    let mut phi = vec![0.0; n];
    let mean = duals_u.iter().sum::<f64>() / duals_u.len() as f64;
    for (ii, &i) in src_idx.iter().enumerate() {
        phi[i] = 0.5 * (duals_u[ii] - mean);
    }

    // Marginal defect of the recovered plan.
    let mut row = vec![0.0; supply.len()];
    for (ii, _jj, f) in &flows {
        row[*ii] += f;
    }
    let defect = row
        .iter()
        .zip(&supply)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    Ok(TransportResult {
        method: Method::Lp,
        w2_squared: w2,
        map_t,
        plan: PlanRepr::Sparse(plan),
        phi: ScalarField::new(rho.grid.clone(), phi)?,
        marginal_defect: defect,
        src_grid: rho.grid.clone(),
        phi_cell_avg: None,
    })
}

/// Entropic transport state between two mass vectors on fixed positions.
struct SinkhornProblem {
    cost: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    n: usize,
    m: usize,
}

impl SinkhornProblem {
    /// Log-domain Sinkhorn with epsilon annealing; returns duals at the
    /// target epsilon and the final marginal defect.
    fn solve(&self, eps: f64, tol: f64, max_iters: usize) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let la: Vec<f64> = self.a.iter().map(|v| v.ln()).collect();
        let lb: Vec<f64> = self.b.iter().map(|v| v.ln()).collect();
        let max_cost = self.cost.iter().fold(0.0f64, |acc, v| acc.max(*v));
        let mut stages = vec![eps];
        let mut e = eps;
        while e < max_cost / 8.0 {
            e *= 4.0;
            stages.push(e);
        }
        stages.reverse();

        let mut alpha = vec![0.0; self.n];
        let mut beta = vec![0.0; self.m];
        let mut total_iters = 0usize;
        let mut defect = f64::INFINITY;
        for (si, &stage_eps) in stages.iter().enumerate() {
            let last = si + 1 == stages.len();
            let budget = if last { max_iters } else { 400 };
            let mut it = 0;
            loop {
                // beta update: column marginals exact afterwards.
                for j in 0..self.m {
                    let mut mx = f64::NEG_INFINITY;
                    for i in 0..self.n {
                        let v = (alpha[i] - self.cost[i * self.m + j]) / stage_eps;
                        if v > mx {
                            mx = v;
                        }
                    }
                    let mut s = 0.0;
                    for i in 0..self.n {
                        s += ((alpha[i] - self.cost[i * self.m + j]) / stage_eps - mx).exp();
                    }
                    beta[j] = stage_eps * (lb[j] - mx - s.ln());
                }
                // alpha update: row marginals exact afterwards.
                for i in 0..self.n {
                    let mut mx = f64::NEG_INFINITY;
                    for j in 0..self.m {
                        let v = (beta[j] - self.cost[i * self.m + j]) / stage_eps;
                        if v > mx {
                            mx = v;
                        }
                    }
                    let mut s = 0.0;
                    for j in 0..self.m {
                        s += ((beta[j] - self.cost[i * self.m + j]) / stage_eps - mx).exp();
                    }
                    alpha[i] = stage_eps * (la[i] - mx - s.ln());
                }
                it += 1;
                total_iters += 1;
                // column defect after the alpha update
                defect = 0.0;
                for j in 0..self.m {
                    let mut col = 0.0;
                    for i in 0..self.n {
                        col += ((alpha[i] + beta[j] - self.cost[i * self.m + j]) / stage_eps)
                            .exp();
                    }
                    defect += (col - self.b[j]).abs();
                }
                if defect <= tol || it >= budget {
                    break;
                }
            }
            if last && defect > tol {
                return Err(Error::Solver {
                    residual: defect,
                    iters: total_iters,
                });
            }
        }
        Ok((alpha, beta, defect))
    }

    fn plan(&self, alpha: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
        let mut p = vec![0.0; self.n * self.m];
        for i in 0..self.n {
            for j in 0..self.m {
                p[i * self.m + j] =
                    ((alpha[i] + beta[j] - self.cost[i * self.m + j]) / eps).exp();
            }
        }
        // exact row marginals by a final rescale
        for i in 0..self.n {
            let row: f64 = p[i * self.m..(i + 1) * self.m].iter().sum();
            if row > 0.0 {
                let s = self.a[i] / row;
                for v in &mut p[i * self.m..(i + 1) * self.m] {
                    *v *= s;
                }
            }
        }
        p
    }

    fn cost_of(&self, plan: &[f64]) -> f64 {
        plan.iter().zip(&self.cost).map(|(p, c)| p * c).sum()
    }
}

fn support_masses(f: &DensityField) -> (Vec<usize>, Vec<f64>, Vec<Vec<f64>>) {
    let vol = f.grid.cell_volume();
    let idx: Vec<usize> = (0..f.grid.num_cells())
        .filter(|&i| f.values[i] > 0.0)
        .collect();
    let masses = idx.iter().map(|&i| f.values[i] * vol).collect();
    let pos = idx.iter().map(|&i| f.grid.center(i)).collect();
    (idx, masses, pos)
}

fn cost_matrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
    let mut c = vec![0.0; a.len() * b.len()];
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            c[i * b.len() + j] = p
                .iter()
                .zip(q)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
        }
    }
    c
}

/// Debiased entropic transport (Sinkhorn divergence on the transport cost):
/// `<P_ab, C> - (<P_aa, C> + <P_bb, C>) / 2`, clamped at zero. The returned
/// plan and potential belong to the cross problem.
pub fn sinkhorn_entropic(rho: &DensityField, g: &DensityField, eps: f64) -> Result<TransportResult> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Parameter(format!("entropic eps={eps} must be > 0")));
    }
    let (mr, mg) = (crate::grid::total_mass(rho), crate::grid::total_mass(g));
    if (mr - mg).abs() > MASS_TOL * mr.abs().max(mg.abs()).max(1.0) {
        return Err(Error::MassMismatch(mr, mg));
    }
    let (src_idx, a, apos) = support_masses(rho);
    let (dst_idx, mut b, bpos) = support_masses(g);
    if src_idx.is_empty() || dst_idx.is_empty() {
        return Err(Error::Domain("cannot transport a zero density".into()));
    }
    // balance exactly
    let s = a.iter().sum::<f64>() / b.iter().sum::<f64>();
    for v in &mut b {
        *v *= s;
    }

    let tol = 1e-9;
    let max_iters = 200_000;
    let cross = SinkhornProblem {
        cost: cost_matrix(&apos, &bpos),
        n: a.len(),
        m: b.len(),
        a: a.clone(),
        b: b.clone(),
    };
    let (alpha, beta, defect) = cross.solve(eps, tol, max_iters)?;
    let plan = cross.plan(&alpha, &beta, eps);
    let cost_ab = cross.cost_of(&plan);

    let self_cost = |masses: &[f64], pos: &[Vec<f64>]| -> Result<f64> {
        let p = SinkhornProblem {
            cost: cost_matrix(pos, pos),
            n: masses.len(),
            m: masses.len(),
            a: masses.to_vec(),
            b: masses.to_vec(),
        };
        let (al, be, _) = p.solve(eps, tol, max_iters)?;
        Ok(p.cost_of(&p.plan(&al, &be, eps)))
    };
    let cost_aa = self_cost(&a, &apos)?;
    let cost_bb = self_cost(&b, &bpos)?;
    let w2 = (cost_ab - 0.5 * (cost_aa + cost_bb)).max(0.0);

    let mut sparse = Vec::new();
    for (ii, &i) in src_idx.iter().enumerate() {
        for (jj, &j) in dst_idx.iter().enumerate() {
            let f = plan[ii * b.len() + jj];
            if f > 1e-16 {
                sparse.push((i, j, f));
            }
        }
    }

    let map_t = if rho.grid.dim() == 1 {
        let n = rho.grid.num_cells();
        let mut num = vec![0.0; n];
        let mut den = vec![0.0; n];
        for (i, j, f) in &sparse {
            num[*i] += f * g.grid.center(*j)[0];
            den[*i] += f;
        }
        Some(
            (0..n)
                .map(|i| {
                    if den[i] > 0.0 {
                        num[i] / den[i]
                    } else {
                        rho.grid.axis_center(0, i)
                    }
                })
                .collect(),
        )
    } else {
        None
    };

    let mut phi = vec![0.0; rho.grid.num_cells()];
    let mean = alpha.iter().sum::<f64>() / alpha.len() as f64;
    for (ii, &i) in src_idx.iter().enumerate() {
        phi[i] = 0.5 * (alpha[ii] - mean);
    }

    Ok(TransportResult {
        method: Method::Sinkhorn,
        w2_squared: w2,
        map_t,
        plan: PlanRepr::Sparse(sparse),
        phi: ScalarField::new(rho.grid.clone(), phi)?,
        marginal_defect: defect,
        src_grid: rho.grid.clone(),
        phi_cell_avg: None,
    })
}

/// Push the source density along the coupling by parameter `s` in `[0, 1]`:
/// `s = 0` reproduces the source, `s = 1` the target. Mass is deposited
/// conservatively: quantile segments re-bin exactly, plan atoms split
/// linearly between the neighboring cells.
pub fn displacement_interpolate(res: &TransportResult, s: f64) -> Result<DensityField> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Parameter(format!(
            "interpolation parameter s={s} must lie in [0, 1]"
        )));
    }
    let grid = res.src_grid.clone();
    let vol = grid.cell_volume();
    let mut mass = vec![0.0; grid.num_cells()];
    match &res.plan {
        PlanRepr::Segments(segments) => {
            let n = grid.n();
            let h = grid.spacing(0);
            let a = grid.domain.extent()[0][0];
            for seg in segments {
                let p0 = (1.0 - s) * seg.s0 + s * seg.t0;
                let p1 = (1.0 - s) * seg.s1 + s * seg.t1;
                deposit_interval(&mut mass, seg.mass, p0, p1, a, h, n);
            }
        }
        PlanRepr::Sparse(plan) => {
            for (i, j, f) in plan {
                let src = res.src_grid.center(*i);
                // target positions live on the source grid in all supported
                // flows (same-grid transport); fall back to source grid
                // geometry for coordinates.
                let dst = res.src_grid.center(*j);
                let p: Vec<f64> = src
                    .iter()
                    .zip(&dst)
                    .map(|(x, y)| (1.0 - s) * x + s * y)
                    .collect();
                deposit_point(&mut mass, *f, &p, &grid);
            }
        }
    }
    let values: Vec<f64> = mass.iter().map(|m| (m / vol).max(0.0)).collect();
    DensityField::new(grid, values)
}

pub(crate) fn deposit_interval(
    mass: &mut [f64],
    m: f64,
    p0: f64,
    p1: f64,
    a: f64,
    h: f64,
    n: usize,
) {
    let (lo, hi) = if p0 <= p1 { (p0, p1) } else { (p1, p0) };
    let width = hi - lo;
    if width < 1e-14 * h {
        let i = (((lo - a) / h).floor() as i64).clamp(0, n as i64 - 1) as usize;
        mass[i] += m;
        return;
    }
    let i0 = (((lo - a) / h).floor() as i64).clamp(0, n as i64 - 1) as usize;
    let i1 = (((hi - a) / h).ceil() as i64).clamp(1, n as i64) as usize;
    for i in i0..i1 {
        let cl = a + i as f64 * h;
        let cr = cl + h;
        let overlap = (hi.min(cr) - lo.max(cl)).max(0.0);
        mass[i] += m * overlap / width;
    }
}

fn deposit_point(mass: &mut [f64], m: f64, p: &[f64], grid: &Grid) {
    let n = grid.n();
    match grid.dim() {
        1 => {
            let (i, w) = cic_axis(p[0], grid, 0);
            mass[i] += m * (1.0 - w);
            if w > 0.0 {
                mass[i + 1] += m * w;
            }
        }
        2 => {
            let (ix, wx) = cic_axis(p[0], grid, 0);
            let (iy, wy) = cic_axis(p[1], grid, 1);
            let pairs = [
                (ix, iy, (1.0 - wx) * (1.0 - wy)),
                (ix + 1, iy, wx * (1.0 - wy)),
                (ix, iy + 1, (1.0 - wx) * wy),
                (ix + 1, iy + 1, wx * wy),
            ];
            for (jx, jy, w) in pairs {
                if w > 0.0 && jx < n && jy < n {
                    mass[grid.flat(jx, jy)] += m * w;
                }
            }
        }
        _ => unreachable!(),
    }
}

/// Cloud-in-cell weights along one axis: returns the lower cell index and
/// the fraction assigned to the upper neighbor.
fn cic_axis(p: f64, grid: &Grid, axis: usize) -> (usize, f64) {
    let n = grid.n();
    let c0 = grid.axis_center(axis, 0);
    let h = grid.spacing(axis);
    let t = (p - c0) / h;
    if t <= 0.0 {
        return (0, 0.0);
    }
    if t >= (n - 1) as f64 {
        return (n - 2, 1.0);
    }
    let i = t.floor() as usize;
    (i, t - i as f64)
}

/// Per-axis barycentric target positions from a sparse plan.
pub fn barycentric_map(res: &TransportResult, dst_grid: &Grid, axis: usize) -> Result<Vec<f64>> {
    match &res.plan {
        PlanRepr::Sparse(plan) => {
            let n = res.src_grid.num_cells();
            let mut num = vec![0.0; n];
            let mut den = vec![0.0; n];
            for (i, j, f) in plan {
                num[*i] += f * dst_grid.center(*j)[axis];
                den[*i] += f;
            }
            Ok((0..n)
                .map(|i| {
                    if den[i] > 0.0 {
                        num[i] / den[i]
                    } else {
                        res.src_grid.center(i)[axis]
                    }
                })
                .collect())
        }
        PlanRepr::Segments(_) => res
            .map_t
            .clone()
            .ok_or_else(|| Error::Domain("missing map".into())),
    }
}
