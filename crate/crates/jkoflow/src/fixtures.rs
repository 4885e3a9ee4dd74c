//! Reusable density profiles for tests, the validation suites, and the
//! command-line initial conditions.

use crate::grid::{linf_norm, DensityField, Grid};
use crate::{Error, Result};
use rand::Rng;

/// Pedestal-plus-Gaussian bump, rescaled to unit mass with the peak value
/// pinned to `peak` exactly (bisection on the pedestal/bump mix). The
/// profile is symmetric about the domain center.
pub fn bump_with_linf(grid: &Grid, peak: f64, width: f64) -> Result<DensityField> {
    if grid.dim() != 1 {
        return Err(Error::Domain("bump fixture is 1-d".into()));
    }
    let vol = grid.domain.volume();
    let uniform = 1.0 / vol;
    if peak <= uniform {
        return Err(Error::Parameter(format!(
            "peak {peak} must exceed the uniform level {uniform}"
        )));
    }
    if !(width > 0.0) {
        return Err(Error::Parameter(format!("width {width} must be > 0")));
    }
    let c = grid.domain.centroid()[0];
    let shape = |x: f64, amp: f64| 1.0 + amp * (-((x - c) / width).powi(2)).exp();
    let build = |amp: f64| -> Result<DensityField> {
        DensityField::from_fn(grid.clone(), |x| shape(x[0], amp))?.normalized()
    };
    // peak of the normalized field is increasing in the bump amplitude
    let (mut lo, mut hi) = (0.0, 1.0);
    while linf_norm(&build(hi)?).0 < peak {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Parameter(format!(
                "peak {peak} unreachable with width {width}"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if linf_norm(&build(mid)?).0 < peak {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    build(0.5 * (lo + hi))
}

/// Smooth monotone transition between two plateau levels (ratio
/// `high/low = ratio`), unit mass; fully supported, so transport maps and
/// their derivatives are well-resolved everywhere.
pub fn smooth_step(grid: &Grid, ratio: f64, sharpness: f64) -> Result<DensityField> {
    if grid.dim() != 1 {
        return Err(Error::Domain("smooth-step fixture is 1-d".into()));
    }
    if !(ratio > 1.0) || !(sharpness > 0.0) {
        return Err(Error::Parameter(
            "smooth_step requires ratio > 1 and sharpness > 0".into(),
        ));
    }
    let c = grid.domain.centroid()[0];
    DensityField::from_fn(grid.clone(), |x| {
        1.0 + (ratio - 1.0) / (1.0 + (-(x[0] - c) * sharpness).exp())
    })?
    .normalized()
}

/// Random strictly positive density, bounded away from zero, unit mass.
pub fn random_positive(grid: &Grid, rng: &mut impl Rng) -> Result<DensityField> {
    let vals: Vec<f64> = (0..grid.num_cells())
        .map(|_| rng.gen_range(0.2..1.8))
        .collect();
    DensityField::new(grid.clone(), vals)?.normalized()
}

/// A pair of densities whose optimal rearrangement is locally rigid
/// (uniform blocks translated by whole cells), so the atomic and continuum
/// transport costs coincide exactly. Returns `(source, target, distance^2)`.
pub fn rigid_pair(grid: &Grid, block_cells: usize, shift_cells: usize) -> Result<(DensityField, DensityField, f64)> {
    if grid.dim() != 1 {
        return Err(Error::Domain("rigid pair fixture is 1-d".into()));
    }
    let n = grid.num_cells();
    if block_cells == 0 || block_cells + shift_cells > n {
        return Err(Error::Parameter(
            "block and shift must fit inside the grid".into(),
        ));
    }
    let h = grid.spacing(0);
    let dens = 1.0 / (block_cells as f64 * h);
    let mk = |start: usize| -> Result<DensityField> {
        let mut v = vec![0.0; n];
        for cell in v.iter_mut().skip(start).take(block_cells) {
            *cell = dens;
        }
        DensityField::new(grid.clone(), v)
    };
    let a = mk(0)?;
    let b = mk(shift_cells)?;
    let d = shift_cells as f64 * h;
    Ok((a, b, d * d))
}

/// Two separated bumps of equal mass, unit total mass.
pub fn two_bumps(grid: &Grid) -> Result<DensityField> {
    if grid.dim() != 1 {
        return Err(Error::Domain("two-bump fixture is 1-d".into()));
    }
    let lo = grid.domain.extent()[0][0];
    let len = grid.domain.length(0);
    let (c1, c2) = (lo + 0.3 * len, lo + 0.7 * len);
    let w = 0.08 * len;
    DensityField::from_fn(grid.clone(), |x| {
        0.2 + (-((x[0] - c1) / w).powi(2)).exp() + (-((x[0] - c2) / w).powi(2)).exp()
    })?
    .normalized()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, total_mass, Coupling, DomainSpec};
    use crate::transport::w2_quantile_1d;
    use rand::SeedableRng;

    fn grid_1d(n: usize) -> Grid {
        build_grid(DomainSpec::interval(0.0, 1.0, Coupling::Dirichlet).unwrap(), n).unwrap()
    }

    #[test]
    fn bump_hits_requested_peak() {
        let grid = grid_1d(200);
        for peak in [1.5, 2.0, 4.0] {
            let f = bump_with_linf(&grid, peak, 0.1).unwrap();
            let (mx, _) = linf_norm(&f);
            assert!((mx - peak).abs() < 1e-9, "peak {mx} wanted {peak}");
            assert!(f.is_probability(1e-12));
        }
    }

    #[test]
    fn bump_is_symmetric() {
        let grid = grid_1d(64);
        let f = bump_with_linf(&grid, 2.0, 0.12).unwrap();
        for i in 0..64 {
            assert!((f.values[i] - f.values[63 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn smooth_step_is_monotone_unit_mass() {
        let grid = grid_1d(100);
        let f = smooth_step(&grid, 3.0, 12.0).unwrap();
        assert!(f.is_probability(1e-12));
        for w in f.values.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
    }

    #[test]
    fn rigid_pair_distance_is_exact() {
        let grid = grid_1d(16);
        let (a, b, d2) = rigid_pair(&grid, 4, 7).unwrap();
        assert!((total_mass(&a) - 1.0).abs() < 1e-12);
        let res = w2_quantile_1d(&a, &b).unwrap();
        assert!((res.w2_squared - d2).abs() < 1e-14);
    }

    #[test]
    fn random_positive_is_bounded_away_from_zero() {
        let grid = grid_1d(24);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let f = random_positive(&grid, &mut rng).unwrap();
        assert!(f.is_probability(1e-12));
        assert!(f.values.iter().all(|v| *v > 0.05));
    }
}
