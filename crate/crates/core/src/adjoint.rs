//! Doléans-Dade exponentials along Monte Carlo paths and Girsanov reweighting.

use rayon::prelude::*;

use crate::drivers::Coefficient;
use crate::error::{BsdeError, Result};
use crate::scenario::{ScenarioPath, ScenarioSet};
use crate::stats::MeanEstimate;

/// Discrete form of the exponential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdjointForm {
    /// `exp(delta dt - beta^2 dt / 2 + beta dW - gamma lambda dt) (1 + gamma dN)`.
    #[default]
    Exponential,
    /// `1 + delta dt + beta dW + gamma dM`.
    Affine,
}

/// Values `Gamma_{start, t_i}` for `i = start..=n` along one path.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointPath {
    pub start: usize,
    pub form: AdjointForm,
    pub values: Vec<f64>,
}

impl AdjointPath {
    /// Value at grid node `i >= start`.
    pub fn at(&self, i: usize) -> f64 {
        self.values[i - self.start]
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("adjoint has a start value")
    }

    pub fn sup_squared(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v * v))
    }

    /// Number of negative values (possible in the affine form only).
    pub fn negative_count(&self) -> usize {
        self.values.iter().filter(|v| **v < 0.0).count()
    }
}

/// One-step multiplicative factor.
#[inline]
pub fn adjoint_factor(form: AdjointForm, coeffs: (f64, f64, f64), dt: f64, dw: f64, dn: f64, lambda: f64) -> f64 {
    let (delta, beta, gamma) = coeffs;
    match form {
        AdjointForm::Exponential => {
            (delta * dt - 0.5 * beta * beta * dt + beta * dw - gamma * lambda * dt).exp() * (1.0 + gamma * dn)
        }
        AdjointForm::Affine => 1.0 + delta * dt + beta * dw + gamma * (dn - lambda * dt),
    }
}

/// Exponential with coefficients `(delta, beta, gamma)` supplied per step by
/// `coeffs(i)`.
pub fn doleans_dade_with(
    path: &ScenarioPath<'_>,
    start: usize,
    form: AdjointForm,
    mut coeffs: impl FnMut(usize) -> (f64, f64, f64),
) -> AdjointPath {
    let n = path.steps();
    assert!(start <= n, "start index beyond the grid");
    let grid = path.grid();
    let mut values = Vec::with_capacity(n + 1 - start);
    let mut g = 1.0;
    values.push(g);
    for i in start..n {
        g *= adjoint_factor(form, coeffs(i), grid.dt(i), path.dw(i), path.dn(i), path.lambda(i));
        values.push(g);
    }
    AdjointPath { start, form, values }
}

/// Exponential with deterministic coefficients evaluated at `(t_i, N_{t_i})`.
pub fn doleans_dade(
    path: &ScenarioPath<'_>,
    delta: &Coefficient,
    beta: &Coefficient,
    gamma: &Coefficient,
    start: usize,
    form: AdjointForm,
) -> AdjointPath {
    let grid = path.grid();
    doleans_dade_with(path, start, form, |i| {
        let (t, d) = (grid.time(i), path.defaulted_at(i));
        (delta.at(t, d), beta.at(t, d), gamma.at(t, d))
    })
}

/// Terminal values `Gamma_{0,T}` of every path, computed in parallel.
pub fn terminal_values(
    set: &ScenarioSet,
    delta: &Coefficient,
    beta: &Coefficient,
    gamma: &Coefficient,
    form: AdjointForm,
) -> Vec<f64> {
    (0..set.len())
        .into_par_iter()
        .map(|p| doleans_dade(&set.path(p), delta, beta, gamma, 0, form).terminal())
        .collect()
}

/// Terminal Girsanov densities `zeta_T` with kernel `(beta, gamma)` (`delta = 0`).
pub fn density_terminals(set: &ScenarioSet, beta: &Coefficient, gamma: &Coefficient) -> Vec<f64> {
    terminal_values(set, &Coefficient::Constant(0.0), beta, gamma, AdjointForm::Exponential)
}

/// Outcome of the unit-mean test of terminal densities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleCheck {
    pub estimate: MeanEstimate,
    /// `|mean - 1| <= 3 SE`.
    pub pass: bool,
}

pub fn check_martingale(terminals: &[f64]) -> Result<MartingaleCheck> {
    if terminals.len() < 2 {
        return Err(BsdeError::InvalidArgument(
            "the martingale check needs at least two paths".into(),
        ));
    }
    let estimate = MeanEstimate::from_samples(terminals);
    Ok(MartingaleCheck {
        estimate,
        pass: estimate.within(1.0, 3.0),
    })
}

/// `(1/N) sum zeta_T F`, the reweighted estimator of `E_Q[F]`.
pub fn girsanov_reweight(
    set: &ScenarioSet,
    densities: &[f64],
    functional: impl Fn(&ScenarioPath<'_>) -> f64 + Sync,
) -> Result<MeanEstimate> {
    if densities.len() != set.len() {
        return Err(BsdeError::Mismatch(format!(
            "{} densities for {} paths",
            densities.len(),
            set.len()
        )));
    }
    let values: Vec<f64> = (0..set.len())
        .into_par_iter()
        .map(|p| densities[p] * functional(&set.path(p)))
        .collect();
    Ok(MeanEstimate::from_samples(&values))
}

/// Large-investor density `dL = L_- gamma dM` with a path-dependent kernel
/// `impact(path, i)` frozen on each step.
pub fn large_investor_density(set: &ScenarioSet, impact: impl Fn(&ScenarioPath<'_>, usize) -> f64 + Sync) -> Vec<f64> {
    (0..set.len())
        .into_par_iter()
        .map(|p| {
            let path = set.path(p);
            doleans_dade_with(&path, 0, AdjointForm::Exponential, |i| (0.0, 0.0, impact(&path, i))).terminal()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{simulate_paths, IntensityModel, TimeGrid};

    fn c(v: f64) -> Coefficient {
        Coefficient::Constant(v)
    }

    #[test]
    fn identity_and_brownian_closed_form() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let set = simulate_paths(&g, &IntensityModel::Constant(0.0), 20, 7).unwrap();
        for p in set.paths() {
            let id = doleans_dade(&p, &c(0.0), &c(0.0), &c(0.0), 0, AdjointForm::Exponential);
            assert!(id.values.iter().all(|v| *v == 1.0));
            let b = doleans_dade(&p, &c(0.0), &c(0.5), &c(0.0), 0, AdjointForm::Exponential);
            let closed = (0.5 * p.terminal_w() - 0.125).exp();
            assert!((b.terminal() - closed).abs() < 1e-12 * closed);
        }
    }

    #[test]
    fn killed_by_default_jump() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let set = simulate_paths(&g, &IntensityModel::Constant(3.0), 200, 9).unwrap();
        let p = set.paths().find(|p| p.default_step().is_some()).unwrap();
        let d = p.default_step().unwrap();
        let a = doleans_dade(&p, &c(0.0), &c(0.0), &c(-1.0), 0, AdjointForm::Exponential);
        for i in 0..=10 {
            if i > d {
                assert_eq!(a.at(i), 0.0);
            } else {
                assert!(a.at(i) > 0.0);
            }
        }
    }

    #[test]
    fn affine_close_to_exponential_on_fine_grids() {
        let mut errs = Vec::new();
        for n in [25, 100, 400] {
            let g = TimeGrid::uniform(1.0, n).unwrap();
            let set = simulate_paths(&g, &IntensityModel::Constant(0.5), 400, 4).unwrap();
            let mut total = 0.0;
            for p in set.paths().filter(|p| p.default_step().is_none()) {
                let e = doleans_dade(&p, &c(0.1), &c(0.3), &c(0.5), 0, AdjointForm::Exponential);
                let a = doleans_dade(&p, &c(0.1), &c(0.3), &c(0.5), 0, AdjointForm::Affine);
                total += (e.terminal() - a.terminal()).abs();
            }
            errs.push(total);
        }
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    }

    #[test]
    fn mismatched_densities_rejected() {
        let g = TimeGrid::uniform(1.0, 2).unwrap();
        let set = simulate_paths(&g, &IntensityModel::Constant(0.0), 5, 1).unwrap();
        assert!(girsanov_reweight(&set, &[1.0; 4], |_| 1.0).is_err());
        assert!(check_martingale(&[1.0]).is_err());
        let d = density_terminals(&set, &c(0.0), &c(0.0));
        assert_eq!(check_martingale(&d).unwrap().estimate.mean, 1.0);
    }
}
