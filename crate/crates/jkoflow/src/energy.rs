//! Internal-energy nonlinearities, the free energy of a density, and the
//! capped KL proximal map used by the entropic splitting solver.
//!
//! Supported nonlinearities `f` (all convex and superlinear on `t >= 0`):
//!
//! * `entropy`: `t ln t`
//! * `power(m)`, `m > 1`: `t^m / (m - 1)`
//! * `regularized(base, delta)`: `base(t) + delta * t ln t`
//! * `zero`: the zero function, useful only as a `regularized` base to study
//!   vanishing diffusion (`delta * t ln t` alone)
//!
//! The flux function is `psi(t) = t f'(t) - f(t)` and its derivative
//! `t f''(t)` drives diffusion CFL limits in the finite-volume reference.

use crate::grid::{Coupling, DensityField, ScalarField};
use crate::poisson::{self, PotentialSolve};
use crate::{Error, Result};

/// Convex superlinear internal-energy integrand.
#[derive(Debug, Clone, PartialEq)]
pub enum Nonlinearity {
    Entropy,
    Power { m: f64 },
    Regularized { base: Box<Nonlinearity>, delta: f64 },
    Zero,
}

impl Nonlinearity {
    pub fn validate(&self) -> Result<()> {
        match self {
            Nonlinearity::Entropy | Nonlinearity::Zero => Ok(()),
            Nonlinearity::Power { m } => {
                if *m > 1.0 && m.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Parameter(format!("power exponent m={m} must be > 1")))
                }
            }
            Nonlinearity::Regularized { base, delta } => {
                if !(*delta > 0.0 && delta.is_finite()) {
                    return Err(Error::Parameter(format!(
                        "regularization weight delta={delta} must be > 0"
                    )));
                }
                if matches!(**base, Nonlinearity::Regularized { .. }) {
                    return Err(Error::Parameter(
                        "regularized base must not itself be regularized".into(),
                    ));
                }
                base.validate()
            }
        }
    }

    /// Parse `entropy`, `zero`, `power:m=<v>`, or
    /// `regularized:base=<spec>,delta=<v>`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "entropy" {
            return Ok(Nonlinearity::Entropy);
        }
        if s == "zero" {
            return Ok(Nonlinearity::Zero);
        }
        if let Some(rest) = s.strip_prefix("power:m=") {
            let m: f64 = rest
                .parse()
                .map_err(|_| Error::Config(format!("bad power exponent `{rest}`")))?;
            let nl = Nonlinearity::Power { m };
            nl.validate()?;
            return Ok(nl);
        }
        if let Some(rest) = s.strip_prefix("regularized:base=") {
            let (base_str, delta_str) = rest
                .rsplit_once(",delta=")
                .ok_or_else(|| Error::Config(format!("missing `,delta=` in `{s}`")))?;
            let delta: f64 = delta_str
                .parse()
                .map_err(|_| Error::Config(format!("bad delta `{delta_str}`")))?;
            let nl = Nonlinearity::Regularized {
                base: Box::new(Nonlinearity::parse(base_str)?),
                delta,
            };
            nl.validate()?;
            return Ok(nl);
        }
        Err(Error::Config(format!("unknown nonlinearity `{s}`")))
    }

    pub fn spec_string(&self) -> String {
        match self {
            Nonlinearity::Entropy => "entropy".into(),
            Nonlinearity::Zero => "zero".into(),
            Nonlinearity::Power { m } => format!("power:m={m}"),
            Nonlinearity::Regularized { base, delta } => {
                format!("regularized:base={},delta={delta}", base.spec_string())
            }
        }
    }
}

/// Evaluate `(f(t), f'(t), f''(t))`. At `t = 0` the entropy branch reports
/// the sentinel `f'(0) = -inf`, `f''(0) = +inf`; callers must handle it.
pub fn f_derivatives(nl: &Nonlinearity, t: f64) -> Result<(f64, f64, f64)> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Parameter(format!("f evaluated at invalid t={t}")));
    }
    Ok(match nl {
        Nonlinearity::Zero => (0.0, 0.0, 0.0),
        Nonlinearity::Entropy => {
            if t == 0.0 {
                (0.0, f64::NEG_INFINITY, f64::INFINITY)
            } else {
                (t * t.ln(), t.ln() + 1.0, 1.0 / t)
            }
        }
        Nonlinearity::Power { m } => {
            let c = 1.0 / (m - 1.0);
            if t == 0.0 {
                let fpp = if *m < 2.0 {
                    f64::INFINITY
                } else if *m == 2.0 {
                    2.0
                } else {
                    0.0
                };
                (0.0, 0.0, fpp)
            } else {
                (
                    t.powf(*m) * c,
                    m * t.powf(m - 1.0) * c,
                    m * t.powf(m - 2.0),
                )
            }
        }
        Nonlinearity::Regularized { base, delta } => {
            let (f0, f1, f2) = f_derivatives(base, t)?;
            if t == 0.0 {
                (f0, f64::NEG_INFINITY, f64::INFINITY)
            } else {
                (
                    f0 + delta * t * t.ln(),
                    f1 + delta * (t.ln() + 1.0),
                    f2 + delta / t,
                )
            }
        }
    })
}

/// Flux function `psi(t) = t f'(t) - f(t)` with `psi(0) = 0`.
pub fn psi_eval(nl: &Nonlinearity, t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Parameter(format!("psi evaluated at invalid t={t}")));
    }
    Ok(match nl {
        Nonlinearity::Zero => 0.0,
        Nonlinearity::Entropy => t,
        Nonlinearity::Power { m } => t.powf(*m),
        Nonlinearity::Regularized { base, delta } => psi_eval(base, t)? + delta * t,
    })
}

/// `psi'(t) = t f''(t)`, the nonlinear diffusivity.
pub fn psi_prime(nl: &Nonlinearity, t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Parameter(format!(
            "psi' evaluated at invalid t={t}"
        )));
    }
    Ok(match nl {
        Nonlinearity::Zero => 0.0,
        Nonlinearity::Entropy => 1.0,
        Nonlinearity::Power { m } => m * t.powf(m - 1.0),
        Nonlinearity::Regularized { base, delta } => psi_prime(base, t)? + delta,
    })
}

/// Free-energy decomposition of a density.
#[derive(Debug, Clone, Copy)]
pub struct EnergyReport {
    /// `sum f(rho) * cell_volume`
    pub internal: f64,
    /// `-(chi/2) * discrete Dirichlet energy of u` on bounded domains,
    /// `(chi/2) * H(rho)` with `H = -<u, rho>` in free space.
    pub interaction: f64,
    pub total: f64,
}

/// Free energy `J(rho)` together with the potential solve it used.
pub fn total_energy_with_potential(
    rho: &DensityField,
    nl: &Nonlinearity,
    chi: f64,
) -> Result<(EnergyReport, PotentialSolve)> {
    nl.validate()?;
    if !(chi >= 0.0) || !chi.is_finite() {
        return Err(Error::Parameter(format!("chi={chi} must be >= 0")));
    }
    let vol = rho.grid.cell_volume();
    let mut internal = 0.0;
    for &v in &rho.values {
        internal += f_derivatives(nl, v)?.0;
    }
    internal *= vol;

    let (interaction, solve) = if chi == 0.0 {
        (
            0.0,
            PotentialSolve {
                u: ScalarField::zeros(rho.grid.clone()),
                residual: 0.0,
                iterations: 0,
            },
        )
    } else {
        let solve = poisson::solve_potential(rho)?;
        let inter = match rho.grid.domain.coupling {
            Coupling::Freespace => {
                let h_val = -rho
                    .values
                    .iter()
                    .zip(&solve.u.values)
                    .map(|(r, u)| r * u)
                    .sum::<f64>()
                    * vol;
                0.5 * chi * h_val
            }
            _ => -0.5 * chi * poisson::dirichlet_energy(&solve.u),
        };
        (inter, solve)
    };

    Ok((
        EnergyReport {
            internal,
            interaction,
            total: internal + interaction,
        },
        solve,
    ))
}

/// Free energy `J(rho) = internal + interaction`.
pub fn total_energy(rho: &DensityField, nl: &Nonlinearity, chi: f64) -> Result<EnergyReport> {
    Ok(total_energy_with_potential(rho, nl, chi)?.0)
}

/// Capped KL proximal map: minimize
/// `gamma f(s) + s ln(s/q) - s + q` over `0 <= s <= cap`.
///
/// The stationarity equation `gamma f'(s) + ln s = ln q` is strictly
/// increasing in `s`, so a safeguarded Newton iteration converges; the root
/// is clamped at the cap when the unconstrained root exceeds it.
pub fn kl_prox_cell(q: f64, gamma: f64, nl: &Nonlinearity, cap: f64) -> Result<f64> {
    if !(q >= 0.0) || !q.is_finite() {
        return Err(Error::Parameter(format!("prox target q={q} must be >= 0")));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    kl_prox_cell_logq(q.ln(), gamma, nl, cap)
}

/// Same as [`kl_prox_cell`] but with `ln q` supplied directly, which keeps
/// the entropic splitting solver stable when `q` under/overflows `f64`.
pub fn kl_prox_cell_logq(log_q: f64, gamma: f64, nl: &Nonlinearity, cap: f64) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(Error::Parameter(format!("prox weight gamma={gamma} must be >= 0")));
    }
    if !(cap > 0.0) {
        return Err(Error::Parameter(format!("cap={cap} must be > 0")));
    }
    if log_q == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    if gamma == 0.0 {
        return Ok(log_q.exp().min(cap));
    }
    // Entropy-only closed form: gamma (1 + ln s) + ln s = ln q.
    if matches!(nl, Nonlinearity::Entropy) {
        let s = ((log_q - gamma) / (1.0 + gamma)).exp();
        return Ok(s.min(cap));
    }
    if matches!(nl, Nonlinearity::Zero) {
        return Ok(log_q.exp().min(cap));
    }

    let phi = |s: f64| -> Result<f64> {
        let fp = f_derivatives(nl, s)?.1;
        Ok(gamma * fp + s.ln() - log_q)
    };
    let phi_prime = |s: f64| -> Result<f64> {
        let fpp = f_derivatives(nl, s)?.2;
        Ok(gamma * fpp + 1.0 / s)
    };

    // Cap-active shortcut.
    if cap.is_finite() && phi(cap)? <= 0.0 {
        return Ok(cap);
    }

    // Bracket the root: phi -> -inf as s -> 0+, phi is increasing.
    let mut guess = log_q.exp();
    if !guess.is_finite() {
        guess = 1e300;
    }
    let mut lo = guess.min(cap).min(1.0);
    let mut tries = 0;
    while phi(lo)? > 0.0 {
        lo *= 0.1;
        tries += 1;
        if lo < 1e-300 || tries > 600 {
            return Ok(0.0);
        }
    }
    let mut hi = guess.min(cap).max(lo * 2.0);
    tries = 0;
    while phi(hi)? < 0.0 {
        hi = (hi * 10.0).min(cap);
        tries += 1;
        if tries > 600 || (cap.is_finite() && hi >= cap && phi(cap)? < 0.0) {
            return Ok(cap.min(1e300));
        }
        if hi > 1e300 {
            return Err(Error::Solver {
                residual: phi(hi)?.abs(),
                iters: tries,
            });
        }
    }

    // Safeguarded Newton.
    let mut s = 0.5 * (lo + hi);
    for _ in 0..200 {
        let val = phi(s)?;
        if val.abs() <= 1e-12 {
            return Ok(s);
        }
        if val > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let step = val / phi_prime(s)?;
        let mut next = s - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - s).abs() <= f64::EPSILON * s.abs() {
            return Ok(next);
        }
        s = next;
    }
    let residual = phi(s)?.abs();
    if residual <= 1e-9 {
        Ok(s)
    } else {
        Err(Error::Solver { residual, iters: 200 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, DomainSpec};
    use proptest::prelude::*;

    #[test]
    fn entropy_values() {
        let (f, fp, fpp) = f_derivatives(&Nonlinearity::Entropy, 1.0).unwrap();
        assert_eq!(f, 0.0);
        assert_eq!(fp, 1.0);
        assert_eq!(fpp, 1.0);
        let (f0, fp0, fpp0) = f_derivatives(&Nonlinearity::Entropy, 0.0).unwrap();
        assert_eq!(f0, 0.0);
        assert_eq!(fp0, f64::NEG_INFINITY);
        assert_eq!(fpp0, f64::INFINITY);
    }

    #[test]
    fn power_values() {
        let nl = Nonlinearity::Power { m: 2.0 };
        let (f, fp, fpp) = f_derivatives(&nl, 3.0).unwrap();
        assert!((f - 9.0).abs() < 1e-13);
        assert!((fp - 6.0).abs() < 1e-13);
        assert!((fpp - 2.0).abs() < 1e-13);
    }

    #[test]
    fn psi_formulas() {
        assert_eq!(psi_eval(&Nonlinearity::Entropy, 2.5).unwrap(), 2.5);
        let nl = Nonlinearity::Power { m: 3.0 };
        assert!((psi_eval(&nl, 2.0).unwrap() - 8.0).abs() < 1e-13);
        assert_eq!(psi_eval(&nl, 0.0).unwrap(), 0.0);
        let reg = Nonlinearity::Regularized {
            base: Box::new(Nonlinearity::Zero),
            delta: 0.01,
        };
        assert!((psi_eval(&reg, 2.0).unwrap() - 0.02).abs() < 1e-15);
        assert!((psi_prime(&reg, 5.0).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn nonlinearity_parsing_round_trips() {
        for s in [
            "entropy",
            "zero",
            "power:m=2",
            "regularized:base=entropy,delta=0.01",
            "regularized:base=power:m=2,delta=0.5",
            "regularized:base=zero,delta=0.001",
        ] {
            let nl = Nonlinearity::parse(s).unwrap();
            assert_eq!(Nonlinearity::parse(&nl.spec_string()).unwrap(), nl);
        }
        assert!(Nonlinearity::parse("power:m=1").is_err());
        assert!(Nonlinearity::parse("bogus").is_err());
    }

    #[test]
    fn prox_entropy_unit_example() {
        // gamma = 1, q = e: 1 + 2 ln s = 1 -> s = 1
        let s = kl_prox_cell(std::f64::consts::E, 1.0, &Nonlinearity::Entropy, f64::INFINITY)
            .unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prox_zero_weight_is_capped_identity() {
        let s = kl_prox_cell(5.0, 0.0, &Nonlinearity::Entropy, 2.0).unwrap();
        assert_eq!(s, 2.0);
        let s = kl_prox_cell(0.3, 0.0, &Nonlinearity::Power { m: 2.0 }, 2.0).unwrap();
        assert_eq!(s, 0.3);
    }

    #[test]
    fn prox_zero_target_is_zero() {
        for nl in [Nonlinearity::Entropy, Nonlinearity::Power { m: 2.0 }] {
            assert_eq!(kl_prox_cell(0.0, 3.0, &nl, 1.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn prox_power_matches_stationarity() {
        let nl = Nonlinearity::Power { m: 2.0 };
        let (q, gamma) = (1.7, 0.4);
        let s = kl_prox_cell(q, gamma, &nl, f64::INFINITY).unwrap();
        let fp = f_derivatives(&nl, s).unwrap().1;
        assert!((gamma * fp + (s / q).ln()).abs() < 1e-10);
    }

    #[test]
    fn prox_respects_cap() {
        let nl = Nonlinearity::Power { m: 2.0 };
        let s = kl_prox_cell(100.0, 1e-6, &nl, 1.5).unwrap();
        assert_eq!(s, 1.5);
    }

    #[test]
    fn internal_energy_of_uniform_entropy_is_zero() {
        let g = build_grid(
            DomainSpec::interval(0.0, 1.0, crate::grid::Coupling::Dirichlet).unwrap(),
            32,
        )
        .unwrap();
        let rho = DensityField::uniform(g);
        let rep = total_energy(&rho, &Nonlinearity::Entropy, 0.0).unwrap();
        assert!(rep.internal.abs() < 1e-14);
        assert_eq!(rep.interaction, 0.0);
    }

    proptest! {
        #[test]
        fn f_is_convex_on_samples(
            a in 1e-6f64..5.0,
            b in 1e-6f64..5.0,
            m in 1.2f64..3.0,
        ) {
            for nl in [Nonlinearity::Entropy, Nonlinearity::Power { m }] {
                let mid = 0.5 * (a + b);
                let fa = f_derivatives(&nl, a).unwrap().0;
                let fb = f_derivatives(&nl, b).unwrap().0;
                let fm = f_derivatives(&nl, mid).unwrap().0;
                prop_assert!(fm <= 0.5 * (fa + fb) + 1e-12 * (1.0 + fa.abs() + fb.abs()));
            }
        }

        #[test]
        fn prox_is_monotone_in_q(
            q1 in 1e-8f64..50.0,
            factor in 1.0f64..20.0,
            gamma in 0.0f64..10.0,
        ) {
            let nl = Nonlinearity::Entropy;
            let s1 = kl_prox_cell(q1, gamma, &nl, 3.0).unwrap();
            let s2 = kl_prox_cell(q1 * factor, gamma, &nl, 3.0).unwrap();
            prop_assert!(s2 >= s1 - 1e-12);
            prop_assert!(s1 <= 3.0 && s2 <= 3.0);
        }
    }
}
