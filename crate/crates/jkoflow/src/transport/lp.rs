//! Exact balanced transportation problem via the transportation simplex
//! (northwest-corner start, MODI/u-v pricing, cycle pivots).
//!
//! Sized for oracle use: both marginals are small (tens of atoms), and the
//! basis tree is rebuilt from scratch every pivot for simplicity.

use crate::{Error, Result};

const MAX_PIVOTS: usize = 50_000;

/// Solve `min sum f_ij c_ij` over nonnegative flows with fixed row sums
/// `supply` and column sums `demand` (assumed balanced to rounding error;
/// the demand vector is rescaled exactly). Returns the optimal cost, the
/// basic flows (including degenerate zeros), and the row/column duals with
/// `u[0] = 0`.
pub(crate) fn transport_simplex(
    supply: &[f64],
    demand: &[f64],
    cost: &[f64],
) -> Result<(f64, Vec<(usize, usize, f64)>, Vec<f64>, Vec<f64>)> {
    let n = supply.len();
    let m = demand.len();
    if n == 0 || m == 0 || cost.len() != n * m {
        return Err(Error::Size("empty or mismatched transportation instance".into()));
    }
    if supply.iter().chain(demand).any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::Parameter(
            "transportation marginals must be positive and finite".into(),
        ));
    }
    let total_s: f64 = supply.iter().sum();
    let total_d: f64 = demand.iter().sum();
    let scale = total_s / total_d;
    let demand: Vec<f64> = demand.iter().map(|v| v * scale).collect();

    // Northwest-corner initial basis: exactly n + m - 1 arcs forming a
    // spanning tree of the bipartite row/column graph.
    let mut basis: Vec<(usize, usize, f64)> = Vec::with_capacity(n + m - 1);
    {
        let mut rem_s = supply.to_vec();
        let mut rem_d = demand.clone();
        let (mut i, mut j) = (0usize, 0usize);
        loop {
            let f = rem_s[i].min(rem_d[j]).max(0.0);
            basis.push((i, j, f));
            rem_s[i] -= f;
            rem_d[j] -= f;
            if i == n - 1 && j == m - 1 {
                break;
            }
            if i < n - 1 && (rem_s[i] <= rem_d[j] || j == m - 1) {
                i += 1;
            } else {
                j += 1;
            }
        }
    }
    debug_assert_eq!(basis.len(), n + m - 1);

    let cost_scale = cost.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let mut u = vec![0.0f64; n];
    let mut v = vec![0.0f64; m];

    for _pivot in 0..MAX_PIVOTS {
        // Duals from the basis tree: nodes 0..n are rows, n..n+m columns.
        let mut row_arcs: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut col_arcs: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (k, &(i, j, _)) in basis.iter().enumerate() {
            row_arcs[i].push(k);
            col_arcs[j].push(k);
        }
        let mut row_set = vec![false; n];
        let mut col_set = vec![false; m];
        u[0] = 0.0;
        row_set[0] = true;
        let mut stack: Vec<(bool, usize)> = vec![(true, 0)]; // (is_row, index)
        while let Some((is_row, idx)) = stack.pop() {
            let arcs = if is_row { &row_arcs[idx] } else { &col_arcs[idx] };
            for &k in arcs {
                let (i, j, _) = basis[k];
                if is_row && !col_set[j] {
                    v[j] = cost[i * m + j] - u[i];
                    col_set[j] = true;
                    stack.push((false, j));
                } else if !is_row && !row_set[i] {
                    u[i] = cost[i * m + j] - v[j];
                    row_set[i] = true;
                    stack.push((true, i));
                }
            }
        }
        if row_set.iter().any(|s| !s) || col_set.iter().any(|s| !s) {
            return Err(Error::Solver {
                residual: f64::INFINITY,
                iters: _pivot,
            });
        }

        // Entering arc: most negative reduced cost.
        let mut best = (-1e-11 * cost_scale, usize::MAX, usize::MAX);
        for i in 0..n {
            for j in 0..m {
                let rc = cost[i * m + j] - u[i] - v[j];
                if rc < best.0 {
                    best = (rc, i, j);
                }
            }
        }
        let (_, ei, ej) = best;
        if ei == usize::MAX {
            // optimal
            let obj = basis
                .iter()
                .map(|&(i, j, f)| f * cost[i * m + j])
                .sum::<f64>();
            let flows = basis
                .iter()
                .map(|&(i, j, f)| (i, j, f.max(0.0)))
                .collect();
            return Ok((obj, flows, u, v));
        }

        // Unique tree path from row node ei to column node ej; the cycle is
        // that path plus the entering arc.
        let path = tree_path(&basis, n, m, ei, ej).ok_or(Error::Solver {
            residual: f64::INFINITY,
            iters: _pivot,
        })?;
        // Arcs along the path alternate orientation; positions 0, 2, ...
        // (sharing a row with the previous plus-arc, starting from the
        // entering arc) lose flow.
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 {
                let f = basis[k].2;
                if f < theta - 1e-18 || (f <= theta && leave == usize::MAX) {
                    theta = f;
                    leave = k;
                }
            }
        }
        let theta = theta.max(0.0);
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 {
                basis[k].2 = (basis[k].2 - theta).max(0.0);
            } else {
                basis[k].2 += theta;
            }
        }
        basis[leave] = (ei, ej, theta);
    }
    Err(Error::Solver {
        residual: f64::INFINITY,
        iters: MAX_PIVOTS,
    })
}

/// Arc indices along the unique basis-tree path from row `ri` to column
/// `cj`. The first arc shares row `ri`, arcs alternate row/column
/// incidence, and the last shares column `cj`.
fn tree_path(
    basis: &[(usize, usize, f64)],
    n: usize,
    m: usize,
    ri: usize,
    cj: usize,
) -> Option<Vec<usize>> {
    // BFS over nodes: rows are 0..n, columns n..n+m.
    let start = ri;
    let goal = n + cj;
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n + m]; // (node, arc)
    for (k, &(i, j, _)) in basis.iter().enumerate() {
        adj[i].push((n + j, k));
        adj[n + j].push((i, k));
    }
    let mut prev: Vec<Option<(usize, usize)>> = vec![None; n + m];
    let mut seen = vec![false; n + m];
    seen[start] = true;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == goal {
            let mut arcs = Vec::new();
            let mut cur = goal;
            while cur != start {
                let (p, k) = prev[cur]?;
                arcs.push(k);
                cur = p;
            }
            arcs.reverse();
            return Some(arcs);
        }
        for &(next, k) in &adj[node] {
            if !seen[next] {
                seen[next] = true;
                prev[next] = Some((node, k));
                queue.push_back(next);
            }
        }
    }
    None
}
