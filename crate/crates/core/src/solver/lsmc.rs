use nalgebra::DMatrix;
use rayon::prelude::*;

use super::claim::{path_terminal_state, Claim};
use super::dividends::DividendProcess;
use super::tree::{picard_step, K_THRESHOLD};
use super::{BsdeSolution, Diagnostics, Method, TreeSolveOptions};
use crate::drivers::{Driver, DriverContext};
use crate::error::{BsdeError, Result};
use crate::scenario::{ScenarioPath, ScenarioSet};
use crate::stats::{MeanEstimate, CHUNK};

/// One-step scheme of the regression solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// `Y_i = E_i + g(t_i, E_i, Z_i, K_i) dt`.
    #[default]
    Explicit,
    /// `Y_i = E_i + g(t_i, Y_i, Z_i, K_i) dt` solved by Picard iteration.
    Implicit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsmcOptions {
    /// Highest Hermite degree in the normalized Brownian state, at most 3.
    pub degree: usize,
    pub scheme: Scheme,
    /// Ridge penalty relative to the mean diagonal of the normal matrix, used
    /// only when the plain system is rank deficient.
    pub ridge: f64,
    /// Picard settings of the implicit scheme.
    pub picard: TreeSolveOptions,
    /// Number of leading paths whose trajectories are kept in the solution.
    pub keep_paths: usize,
}

impl Default for LsmcOptions {
    fn default() -> Self {
        Self {
            degree: 3,
            scheme: Scheme::Explicit,
            ridge: 1e-8,
            picard: TreeSolveOptions::default(),
            keep_paths: 16,
        }
    }
}

impl LsmcOptions {
    /// Basis size: Hermite polynomials tensored with the default indicator.
    pub fn basis_size(&self) -> usize {
        2 * (self.degree + 1)
    }
}

/// Fitted coefficients of one default regime at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeFit {
    pub degree: usize,
    pub samples: usize,
    pub e: Vec<f64>,
    pub z: Vec<f64>,
    pub k: Vec<f64>,
    pub ridge_used: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepFit {
    pub alive: Option<RegimeFit>,
    pub defaulted: Option<RegimeFit>,
}

#[derive(Debug, Clone)]
pub struct LsmcSolution {
    pub y0: f64,
    pub z0: f64,
    pub k0: f64,
    /// Delta-method standard error of the last step, treating `Y_1` as given.
    pub std_error: f64,
    pub samples: usize,
    /// Sample mean of `Y_i` at every step.
    pub mean_curve: Vec<f64>,
    pub fits: Vec<StepFit>,
    pub diagnostics: Diagnostics,
    /// Trajectories of the first `keep_paths` paths, indexed `[step][path]`.
    pub paths: BsdeSolution,
}

impl LsmcSolution {
    pub fn estimate(&self) -> MeanEstimate {
        MeanEstimate {
            mean: self.y0,
            std_error: self.std_error,
            samples: self.samples,
        }
    }

    /// Fitted `(E[Y_{i+1}], Z_i, K_i)` at Brownian level `w` and regime `defaulted`.
    pub fn conditional(&self, step: usize, t: f64, w: f64, defaulted: bool) -> Option<(f64, f64, f64)> {
        let fit = self.fits.get(step)?;
        let r = if defaulted {
            fit.defaulted.as_ref()
        } else {
            fit.alive.as_ref()
        }?;
        let b = hermite(state_variable(t, w), r.degree);
        let dot = |c: &[f64]| c.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>();
        Some((dot(&r.e), dot(&r.z), dot(&r.k)))
    }
}

fn state_variable(t: f64, w: f64) -> f64 {
    if t > 0.0 {
        w / t.sqrt()
    } else {
        0.0
    }
}

/// Probabilists' Hermite polynomials `He_0..He_degree`.
fn hermite(x: f64, degree: usize) -> [f64; 4] {
    let all = [1.0, x, x * x - 1.0, x * x * x - 3.0 * x];
    let mut out = [0.0; 4];
    out[..=degree].copy_from_slice(&all[..=degree]);
    out
}

/// Per-path regression targets at one step.
struct Targets {
    e: f64,
    z: f64,
    k: f64,
}

fn targets(path: &ScenarioPath<'_>, step: usize, y_next: f64) -> Targets {
    let dt = path.grid().dt(step);
    let k = if !path.defaulted_at(step) && path.lambda(step) * dt > K_THRESHOLD {
        let m = path.step_default_probability(step);
        if m > 0.0 && m < 1.0 {
            y_next * (path.dn(step) - m) / (m * (1.0 - m))
        } else {
            0.0
        }
    } else {
        0.0
    };
    Targets {
        e: y_next,
        z: y_next * path.dw(step) / dt,
        k,
    }
}

/// Least-squares fit of the three targets over the paths of one default regime.
fn fit_regime(
    set: &ScenarioSet,
    step: usize,
    w: &[f64],
    y_next: &[f64],
    defaulted: bool,
    options: &LsmcOptions,
    warnings: &mut Vec<String>,
) -> Result<Option<RegimeFit>> {
    let t = set.grid().time(step);
    let members = (0..set.len())
        .filter(|&p| set.path(p).defaulted_at(step) == defaulted)
        .count();
    if members == 0 {
        return Ok(None);
    }
    let max_degree = if t > 0.0 { options.degree.min(3) } else { 0 };
    let mut degree = max_degree;
    while degree > 0 && members < 10 * (degree + 1) {
        degree -= 1;
    }
    if degree < max_degree {
        warnings.push(format!(
            "step {step}: {} regime has {members} paths, basis degree lowered to {degree}",
            if defaulted { "post-default" } else { "pre-default" }
        ));
    }
    let b = degree + 1;
    type Acc = (Vec<f64>, Vec<f64>);
    let zero: Acc = (vec![0.0; b * b], vec![0.0; 3 * b]);
    let parts: Vec<Acc> = (0..set.len())
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = zero.clone();
            for &p in chunk {
                let path = set.path(p);
                if path.defaulted_at(step) != defaulted {
                    continue;
                }
                let h = hermite(state_variable(t, w[p]), degree);
                let tg = targets(&path, step, y_next[p]);
                for r in 0..b {
                    for c in 0..b {
                        acc.0[r * b + c] += h[r] * h[c];
                    }
                    acc.1[r] += h[r] * tg.e;
                    acc.1[b + r] += h[r] * tg.z;
                    acc.1[2 * b + r] += h[r] * tg.k;
                }
            }
            acc
        })
        .collect();
    let mut total = zero;
    for part in parts {
        for (a, v) in total.0.iter_mut().zip(part.0) {
            *a += v;
        }
        for (a, v) in total.1.iter_mut().zip(part.1) {
            *a += v;
        }
    }
    let a = DMatrix::from_row_slice(b, b, &total.0);
    let rhs = DMatrix::from_column_slice(b, 3, &total.1);
    let (sol, ridge_used) = match well_conditioned_solve(&a, &rhs) {
        Some(s) => (s, false),
        None => {
            let scale = options.ridge * (a.trace() / b as f64).max(1.0);
            let reg = &a + DMatrix::identity(b, b) * scale;
            let s = well_conditioned_solve(&reg, &rhs).ok_or_else(|| BsdeError::Regression {
                step,
                reason: "normal equations singular after ridge".into(),
            })?;
            warnings.push(format!(
                "step {step}: rank-deficient regression, ridge penalty {scale:e} applied"
            ));
            (s, true)
        }
    };
    let col = |j: usize| -> Vec<f64> { sol.column(j).iter().copied().collect() };
    let fit = RegimeFit {
        degree,
        samples: members,
        e: col(0),
        z: col(1),
        k: col(2),
        ridge_used,
    };
    if fit.e.iter().chain(&fit.z).chain(&fit.k).any(|v| !v.is_finite()) {
        return Err(BsdeError::Regression {
            step,
            reason: "non-finite regression coefficients".into(),
        });
    }
    Ok(Some(fit))
}

fn well_conditioned_solve(a: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = a.clone().cholesky()?;
    let diag: Vec<f64> = chol.l_dirty().diagonal().iter().map(|v| v * v).collect();
    let max = diag.iter().copied().fold(0.0, f64::max);
    let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min / max < 1e-12 {
        return None;
    }
    Some(chol.solve(rhs))
}

fn eval(fit: &RegimeFit, x: f64) -> (f64, f64, f64) {
    let h = hermite(x, fit.degree);
    let dot = |c: &[f64]| c.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
    (dot(&fit.e), dot(&fit.z), dot(&fit.k))
}

/// Regression Monte Carlo solution of `-dY = g dt + dD - Z dW - K dM`.
///
/// Conditional expectations are least-squares projections on Hermite
/// polynomials of `W_t / sqrt(t)`, fitted separately per default regime. `Z`
/// and `K` are the projections of `Y_{i+1} dW / dt` and
/// `Y_{i+1} (dN - m) / (m (1 - m))` with `m` the step default probability.
pub fn solve_lsmc(
    set: &ScenarioSet,
    driver: &Driver,
    claim: &Claim,
    dividends: &DividendProcess,
    options: &LsmcOptions,
) -> Result<LsmcSolution> {
    let grid = set.grid();
    let n = grid.steps();
    dividends.validate(grid.horizon())?;
    if options.degree > 3 {
        return Err(BsdeError::InvalidArgument(format!(
            "basis degree {} exceeds 3",
            options.degree
        )));
    }
    if set.len() < 10 * options.basis_size() {
        return Err(BsdeError::InvalidArgument(format!(
            "{} paths is fewer than 10 times the {} basis functions",
            set.len(),
            options.basis_size()
        )));
    }
    let inc = dividends.increments(grid);
    let jump = dividends.terminal_jump(grid.horizon());
    let count = set.len();
    let keep = options.keep_paths.min(count);

    let mut y: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|p| Ok(claim.payoff(&path_terminal_state(set, &set.path(p)))? + jump))
        .collect::<Result<_>>()?;
    let mut w: Vec<f64> = (0..count).into_par_iter().map(|p| set.path(p).terminal_w()).collect();

    let mut kept_y = vec![Vec::new(); n + 1];
    let mut kept_z = vec![Vec::new(); n];
    let mut kept_k = vec![Vec::new(); n];
    kept_y[n] = y[..keep].to_vec();
    let mut fits = vec![StepFit::default(); n];
    let mut warnings = Vec::new();
    let mut r2 = vec![0.0; n];
    let mut iterations = vec![0; n];
    let mut last = (0.0, 0.0, 0.0, 0.0);
    let mut mean_curve = vec![0.0; n + 1];
    mean_curve[n] = crate::stats::deterministic_sum(&y) / count as f64;

    for step in (0..n).rev() {
        let t = grid.time(step);
        let dt = grid.dt(step);
        w.par_iter_mut()
            .enumerate()
            .for_each(|(p, wp)| *wp -= set.path(p).dw(step));
        let alive = fit_regime(set, step, &w, &y, false, options, &mut warnings)?;
        let dead = fit_regime(set, step, &w, &y, true, options, &mut warnings)?;

        // R^2 of the conditional-mean fit, pooled over regimes
        let mean = crate::stats::deterministic_sum(&y) / count as f64;
        let res: Vec<(f64, f64)> = (0..count)
            .into_par_iter()
            .map(|p| {
                let fit = if set.path(p).defaulted_at(step) { &dead } else { &alive };
                let e = eval(
                    fit.as_ref().expect("regime with members is fitted"),
                    state_variable(t, w[p]),
                )
                .0;
                ((y[p] - e).powi(2), (y[p] - mean).powi(2))
            })
            .collect();
        let ss_res: f64 = res
            .par_chunks(CHUNK)
            .map(|c| c.iter().map(|r| r.0).sum::<f64>())
            .collect::<Vec<_>>()
            .iter()
            .sum();
        let ss_tot: f64 = res
            .par_chunks(CHUNK)
            .map(|c| c.iter().map(|r| r.1).sum::<f64>())
            .collect::<Vec<_>>()
            .iter()
            .sum();
        r2[step] = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

        if step == 0 {
            let fit = alive.as_ref().expect("every path is alive at t = 0");
            let (e, z, k) = eval(fit, 0.0);
            let ctx = DriverContext {
                t,
                lambda: set.path(0).lambda(0),
                defaulted: false,
            };
            let (y0, it) = one_step(driver, &ctx, e + inc[0], z, k, dt, options, step)?;
            iterations[0] = it;
            last = (y0, z, k, delta_method_se(set, driver, &ctx, &y, (e, z, k), dt));
        }

        let rows: Vec<Result<(f64, f64, f64, usize)>> = (0..count)
            .into_par_iter()
            .map(|p| {
                let path = set.path(p);
                let defaulted = path.defaulted_at(step);
                let fit = if defaulted { &dead } else { &alive };
                let (e, z, k) = eval(
                    fit.as_ref().expect("regime with members is fitted"),
                    state_variable(t, w[p]),
                );
                let k = if defaulted { 0.0 } else { k };
                let ctx = DriverContext {
                    t,
                    lambda: path.lambda(step),
                    defaulted,
                };
                let (v, it) = one_step(driver, &ctx, e + inc[step], z, k, dt, options, step)?;
                Ok((v, z, k, it))
            })
            .collect();
        let mut zs = Vec::with_capacity(keep);
        let mut ks = Vec::with_capacity(keep);
        for (p, r) in rows.into_iter().enumerate() {
            let (v, z, k, it) = r?;
            if !v.is_finite() {
                return Err(BsdeError::NonFinite(format!("Y at step {step}, path {p}")));
            }
            y[p] = v;
            iterations[step] = iterations[step].max(it);
            if p < keep {
                zs.push(z);
                ks.push(k);
            }
        }
        mean_curve[step] = crate::stats::deterministic_sum(&y) / count as f64;
        kept_y[step] = y[..keep].to_vec();
        kept_z[step] = zs;
        kept_k[step] = ks;
        fits[step] = StepFit { alive, defaulted: dead };
    }

    let diagnostics = Diagnostics {
        picard_iterations: iterations,
        regression_r2: r2,
        terminal_residual: 0.0,
        warnings,
    };
    let (y0, z0, k0, se) = last;
    Ok(LsmcSolution {
        y0,
        z0,
        k0,
        std_error: se,
        samples: count,
        mean_curve,
        fits,
        paths: BsdeSolution {
            method: Method::Lsmc,
            times: grid.nodes().to_vec(),
            y: kept_y,
            z: kept_z,
            k: kept_k,
            diagnostics: diagnostics.clone(),
        },
        diagnostics,
    })
}

#[allow(clippy::too_many_arguments)]
fn one_step(
    driver: &Driver,
    ctx: &DriverContext,
    base: f64,
    z: f64,
    k: f64,
    dt: f64,
    options: &LsmcOptions,
    step: usize,
) -> Result<(f64, usize)> {
    match options.scheme {
        Scheme::Explicit => Ok((base + driver.value(ctx, base, z, k) * dt, 0)),
        Scheme::Implicit => picard_step(driver, ctx, base, z, k, dt, &options.picard, step),
    }
}

/// Standard error of `Y_0 = E + g(E, Z, K) dt` from the per-path linearization
/// `u = (1 + g_y dt) Y_1 + g_z Y_1 dW + g_k dt Y_1 (dN - m) / (m (1 - m))`.
fn delta_method_se(
    set: &ScenarioSet,
    driver: &Driver,
    ctx: &DriverContext,
    y1: &[f64],
    (e, z, k): (f64, f64, f64),
    dt: f64,
) -> f64 {
    let h = 1e-6;
    let d = |dy: f64, dz: f64, dk: f64| {
        (driver.value(ctx, e + dy, z + dz, k + dk) - driver.value(ctx, e - dy, z - dz, k - dk)) / (2.0 * h)
    };
    let (gy, gz, gk) = (d(h, 0.0, 0.0), d(0.0, h, 0.0), d(0.0, 0.0, h));
    let u: Vec<f64> = (0..set.len())
        .into_par_iter()
        .map(|p| {
            let tg = targets(&set.path(p), 0, y1[p]);
            tg.e * (1.0 + gy * dt) + dt * (gz * tg.z + gk * tg.k)
        })
        .collect();
    MeanEstimate::from_samples(&u).std_error
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{simulate_paths, IntensityModel, TimeGrid};
    use crate::solver::linear_representation_paths;

    #[test]
    fn constant_claim_is_exact() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let set = simulate_paths(&g, &IntensityModel::Constant(1.0), 2000, 1).unwrap();
        let s = solve_lsmc(
            &set,
            &Driver::zero(),
            &Claim::Constant(3.0),
            &DividendProcess::none(),
            &LsmcOptions::default(),
        )
        .unwrap();
        assert!((s.y0 - 3.0).abs() < 1e-12);
        assert!(s.paths.y.iter().flatten().all(|v| (*v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn linear_driver_agrees_with_representation() {
        let g = TimeGrid::uniform(1.0, 20).unwrap();
        let set = simulate_paths(&g, &IntensityModel::Constant(0.5), 40_000, 7).unwrap();
        let d = Driver::lambda_linear(0.1, -0.2, 0.3, 0.4, 0.5).unwrap();
        let claim = Claim::expression("max(w, 0) + n").unwrap();
        let none = DividendProcess::none();
        let a = solve_lsmc(&set, &d, &claim, &none, &LsmcOptions::default()).unwrap();
        let b = linear_representation_paths(&set, &d, &claim, &none).unwrap();
        let se = a.std_error.hypot(b.std_error);
        assert!(
            (a.y0 - b.mean).abs() < 3.0 * se + 0.02,
            "{} vs {} (se {se})",
            a.y0,
            b.mean
        );
        let imp = solve_lsmc(
            &set,
            &d,
            &claim,
            &none,
            &LsmcOptions {
                scheme: Scheme::Implicit,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((imp.y0 - a.y0).abs() < 0.02);
    }

    #[test]
    fn too_few_paths() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        let set = simulate_paths(&g, &IntensityModel::Constant(1.0), 50, 1).unwrap();
        let r = solve_lsmc(
            &set,
            &Driver::zero(),
            &Claim::Constant(1.0),
            &DividendProcess::none(),
            &LsmcOptions::default(),
        );
        assert!(matches!(r, Err(BsdeError::InvalidArgument(_))));
    }
}
