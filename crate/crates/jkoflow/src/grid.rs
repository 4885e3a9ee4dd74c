//! Domains, uniform cell-centered grids, and the two field types everything
//! else operates on.
//!
//! A [`Grid`] covers a box in 1 or 2 dimensions with the same number of cells
//! along each axis; cell centers sit at midpoints, so fields are
//! finite-volume cell averages. [`DensityField`] enforces nonnegativity and
//! finiteness at construction; probability normalization is checked at solver
//! entry points rather than in the constructor so diagnostic fields (zero
//! densities, differences) remain representable.

use crate::{Error, Result};

/// Boundary coupling for the chemoattractant equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// -Δu = ρ with u = 0 on the boundary.
    Dirichlet,
    /// -Δu = ρ - 1/|Ω| with zero flux and zero-mean gauge.
    NeumannShifted,
    /// -Δu + u = ρ with zero flux.
    NeumannHelmholtz,
    /// -Δu = ρ - 1/|Ω| on the torus, zero-mean gauge.
    Periodic,
    /// u = -U * ρ with the 2-d logarithmic kernel on a truncation window.
    Freespace,
}

impl Coupling {
    pub fn as_str(&self) -> &'static str {
        match self {
            Coupling::Dirichlet => "dirichlet",
            Coupling::NeumannShifted => "neumann_shifted",
            Coupling::NeumannHelmholtz => "neumann_helmholtz",
            Coupling::Periodic => "periodic",
            Coupling::Freespace => "freespace",
        }
    }
}

impl std::str::FromStr for Coupling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dirichlet" => Ok(Coupling::Dirichlet),
            "neumann_shifted" => Ok(Coupling::NeumannShifted),
            "neumann_helmholtz" => Ok(Coupling::NeumannHelmholtz),
            "periodic" => Ok(Coupling::Periodic),
            "freespace" => Ok(Coupling::Freespace),
            other => Err(Error::Config(format!("unknown coupling `{other}`"))),
        }
    }
}

/// Axis-aligned box domain together with its boundary coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    extent: Vec<[f64; 2]>,
    pub coupling: Coupling,
}

impl DomainSpec {
    pub fn new(extent: Vec<[f64; 2]>, coupling: Coupling) -> Result<Self> {
        let dim = extent.len();
        if dim == 0 || dim > 2 {
            return Err(Error::Domain(format!(
                "dimension must be 1 or 2, got {dim}"
            )));
        }
        for (axis, e) in extent.iter().enumerate() {
            if !e[0].is_finite() || !e[1].is_finite() || e[1] <= e[0] {
                return Err(Error::Domain(format!(
                    "axis {axis} extent [{}, {}] is not a nonempty finite interval",
                    e[0], e[1]
                )));
            }
        }
        if coupling == Coupling::Freespace && dim != 2 {
            return Err(Error::Domain(
                "freespace coupling requires dimension 2".into(),
            ));
        }
        Ok(DomainSpec { extent, coupling })
    }

    /// Convenience constructor for the unit-style 1-d interval.
    pub fn interval(lo: f64, hi: f64, coupling: Coupling) -> Result<Self> {
        DomainSpec::new(vec![[lo, hi]], coupling)
    }

    pub fn dim(&self) -> usize {
        self.extent.len()
    }

    pub fn extent(&self) -> &[[f64; 2]] {
        &self.extent
    }

    pub fn length(&self, axis: usize) -> f64 {
        self.extent[axis][1] - self.extent[axis][0]
    }

    pub fn volume(&self) -> f64 {
        self.extent.iter().map(|e| e[1] - e[0]).product()
    }

    pub fn centroid(&self) -> Vec<f64> {
        self.extent.iter().map(|e| 0.5 * (e[0] + e[1])).collect()
    }
}

/// Uniform cell-centered grid: `n` cells along each axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub domain: DomainSpec,
    n: usize,
    h: Vec<f64>,
}

/// Build a grid with `cells_per_axis` cells along every axis of `domain`.
pub fn build_grid(domain: DomainSpec, cells_per_axis: usize) -> Result<Grid> {
    if cells_per_axis < 2 {
        return Err(Error::InvalidResolution(cells_per_axis));
    }
    let h = (0..domain.dim())
        .map(|a| domain.length(a) / cells_per_axis as f64)
        .collect();
    Ok(Grid {
        domain,
        n: cells_per_axis,
        h,
    })
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Cells along one axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of cells.
    pub fn num_cells(&self) -> usize {
        self.n.pow(self.dim() as u32)
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.h[axis]
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.iter().product()
    }

    /// Center coordinate of cell `i` along `axis`.
    pub fn axis_center(&self, axis: usize, i: usize) -> f64 {
        self.domain.extent()[axis][0] + (i as f64 + 0.5) * self.h[axis]
    }

    /// Cell-center coordinates for a flat index (row-major, x fastest).
    pub fn center(&self, flat: usize) -> Vec<f64> {
        match self.dim() {
            1 => vec![self.axis_center(0, flat)],
            2 => {
                let ix = flat % self.n;
                let iy = flat / self.n;
                vec![self.axis_center(0, ix), self.axis_center(1, iy)]
            }
            _ => unreachable!(),
        }
    }

    pub fn flat(&self, ix: usize, iy: usize) -> usize {
        ix + self.n * iy
    }

    pub fn same_geometry(&self, other: &Grid) -> bool {
        self == other
    }
}

fn check_values(grid: &Grid, values: &[f64], allow_negative: bool) -> Result<()> {
    if values.len() != grid.num_cells() {
        return Err(Error::Domain(format!(
            "expected {} values, got {}",
            grid.num_cells(),
            values.len()
        )));
    }
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Domain(format!("non-finite value at cell {i}")));
        }
        if !allow_negative && *v < 0.0 {
            return Err(Error::Domain(format!(
                "negative density {v:e} at cell {i}"
            )));
        }
    }
    Ok(())
}

/// Nonnegative cell-averaged density.
#[derive(Debug, Clone)]
pub struct DensityField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        check_values(&grid, &values, false)?;
        Ok(DensityField { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.num_cells())
            .map(|i| f(&grid.center(i)))
            .collect();
        DensityField::new(grid, values)
    }

    pub fn uniform(grid: Grid) -> Self {
        let v = 1.0 / grid.domain.volume();
        let values = vec![v; grid.num_cells()];
        DensityField { grid, values }
    }

    /// Rescale multiplicatively to unit mass.
    pub fn normalized(mut self) -> Result<Self> {
        let m = total_mass(&self);
        if m <= 0.0 {
            return Err(Error::Domain("cannot normalize a zero density".into()));
        }
        for v in &mut self.values {
            *v /= m;
        }
        Ok(self)
    }

    /// Check |mass - 1| against a tolerance.
    pub fn is_probability(&self, tol: f64) -> bool {
        (total_mass(self) - 1.0).abs() <= tol
    }
}

/// Sign-free scalar field (potentials, differences, velocities).
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        check_values(&grid, &values, true)?;
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        let values = vec![0.0; grid.num_cells()];
        ScalarField { grid, values }
    }
}

/// Total mass `sum(values) * cell_volume`.
pub fn total_mass(rho: &DensityField) -> f64 {
    rho.values.iter().sum::<f64>() * rho.grid.cell_volume()
}

/// Discrete L-infinity norm: maximum cell average and its flat index.
/// Ties resolve to the lowest index.
pub fn linf_norm(rho: &DensityField) -> (f64, usize) {
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for (i, v) in rho.values.iter().enumerate() {
        if *v > best {
            best = *v;
            arg = i;
        }
    }
    (best, arg)
}

/// Second moment about the centroid of the domain.
pub fn second_moment(rho: &DensityField) -> f64 {
    let c = rho.grid.domain.centroid();
    let vol = rho.grid.cell_volume();
    let mut acc = 0.0;
    for (i, v) in rho.values.iter().enumerate() {
        let x = rho.grid.center(i);
        let r2: f64 = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
        acc += r2 * v;
    }
    acc * vol
}

/// Mean value of a scalar field (cell average of averages).
pub fn mean_value(u: &ScalarField) -> f64 {
    u.values.iter().sum::<f64>() / u.values.len() as f64
}
