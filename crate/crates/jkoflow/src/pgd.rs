//! Projected gradient descent with Barzilai-Borwein steps and a monotone
//! backtracking safeguard. Shared by the quantile-space JKO subproblem, the
//! direct Eulerian step, and the brute-force oracle.

use crate::{Error, Result};

pub(crate) struct PgdOutcome {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Max-norm of the final gradient mapping `(x - P(x - t g)) / t`.
    #[allow(dead_code)]
    pub grad_map: f64,
    pub iterations: usize,
}

pub(crate) struct PgdOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Initial trial step.
    pub step0: f64,
}

/// Minimize `objective` over the convex set implemented by `project`
/// (in-place projection). `gradient` fills its output slice.
pub(crate) fn projected_bb(
    x0: Vec<f64>,
    objective: &dyn Fn(&[f64]) -> f64,
    gradient: &dyn Fn(&[f64], &mut [f64]),
    project: &dyn Fn(&mut [f64]),
    opts: &PgdOptions,
) -> Result<PgdOutcome> {
    let n = x0.len();
    let mut x = x0;
    project(&mut x);
    let mut fx = objective(&x);
    let mut g = vec![0.0; n];
    gradient(&x, &mut g);

    let mut t = opts.step0.max(1e-300);
    let mut trial = vec![0.0; n];
    let mut best_gap = f64::INFINITY;

    for iter in 0..opts.max_iters {
        // Backtracking line search on the projected step.
        let mut accepted = false;
        let mut ft_accepted = fx;
        for _ in 0..80 {
            for i in 0..n {
                trial[i] = x[i] - t * g[i];
            }
            project(&mut trial);
            let ft = objective(&trial);
            let mut lin = 0.0;
            let mut sq = 0.0;
            for i in 0..n {
                let d = trial[i] - x[i];
                lin += g[i] * d;
                sq += d * d;
            }
            if ft <= fx + lin + sq / (2.0 * t) + 1e-15 * (1.0 + fx.abs()) {
                accepted = true;
                ft_accepted = ft;
                break;
            }
            t *= 0.5;
            if t < 1e-18 {
                break;
            }
        }
        if !accepted {
            // Step collapsed: report the current gradient mapping.
            let gap = gradient_mapping(&x, &g, project, 1e-8);
            return Ok(PgdOutcome {
                x,
                objective: fx,
                grad_map: gap,
                iterations: iter,
            });
        }

        let mut moved = 0.0f64;
        for i in 0..n {
            moved = moved.max((trial[i] - x[i]).abs());
        }
        let gap = moved / t;
        best_gap = best_gap.min(gap);

        let old_x = std::mem::replace(&mut x, trial.clone());
        let old_g = g.clone();
        fx = ft_accepted;
        gradient(&x, &mut g);

        if gap <= opts.tol {
            return Ok(PgdOutcome {
                x,
                objective: fx,
                grad_map: gap,
                iterations: iter + 1,
            });
        }

        // Barzilai-Borwein step length for the next iteration.
        let (sx, sg) = (&old_x, &old_g);
        let mut ss = 0.0;
        let mut sy = 0.0;
        for i in 0..n {
            let s = x[i] - sx[i];
            let y = g[i] - sg[i];
            ss += s * s;
            sy += s * y;
        }
        if sy > 1e-300 && ss > 0.0 {
            t = (ss / sy).clamp(1e-14, 1e14);
        } else {
            t *= 2.0;
        }
    }

    Err(Error::Solver {
        residual: best_gap,
        iters: opts.max_iters,
    })
}

/// Gradient mapping norm at a fixed small probe step.
fn gradient_mapping(
    x: &[f64],
    g: &[f64],
    project: &dyn Fn(&mut [f64]),
    probe: f64,
) -> f64 {
    let mut trial: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - probe * b).collect();
    project(&mut trial);
    trial
        .iter()
        .zip(x)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / probe
}
