use rayon::prelude::*;

use super::claim::Claim;
use super::dividends::DividendProcess;
use super::{BsdeSolution, Diagnostics, Method};
use crate::drivers::{Driver, DriverContext};
use crate::error::{BsdeError, Result};
use crate::scenario::{Lattice, ScenarioTree};

/// Intensity-times-step below which `K` is set to 0.
pub(crate) const K_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeSolveOptions {
    /// Picard stops when `|y_{k+1} - y_k| <= tolerance (1 + |y_k|)`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for TreeSolveOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 50,
        }
    }
}

/// Exact one-step conditional quantities at a node:
/// `E[Y_{i+1}]`, `Z = E[Y_{i+1} dW] / dt` and
/// `K = Cov(Y_{i+1}, dN) / Var(dN)` before default (0 otherwise).
///
/// `K` is the coefficient of the one-step projection of `Y_{i+1}` on the
/// compensated jump, so `Y_{i+1} = E + Z dW + K (dN - E[dN])` whenever the
/// node has three or fewer children.
pub fn one_step_estimates<L: Lattice + ?Sized>(lat: &L, level: usize, idx: usize, y_next: &[f64]) -> (f64, f64, f64) {
    let dt = lat.grid().dt(level);
    let st = lat.state(level, idx);
    let kids = lat.children(level, idx);
    let mut e = 0.0;
    let mut ew = 0.0;
    let mut m = 0.0;
    for c in kids.iter() {
        let y = y_next[c.index];
        e += c.prob * y;
        ew += c.prob * y * c.dw;
        m += c.prob * c.dn;
    }
    let z = ew / dt;
    let k = if !st.defaulted && st.lambda * dt > K_THRESHOLD && m > 0.0 && m < 1.0 {
        let cov: f64 = kids.iter().map(|c| c.prob * y_next[c.index] * (c.dn - m)).sum();
        cov / (m * (1.0 - m))
    } else {
        0.0
    };
    (e, z, k)
}

/// Fixed point `y = base + g(t, y, z, k) dt` by Picard iteration.
pub(crate) fn picard_step(
    driver: &Driver,
    ctx: &DriverContext,
    base: f64,
    z: f64,
    k: f64,
    dt: f64,
    options: &TreeSolveOptions,
    step: usize,
) -> Result<(f64, usize)> {
    let mut y = base;
    for it in 1..=options.max_iterations {
        let next = base + driver.value(ctx, y, z, k) * dt;
        if !next.is_finite() {
            return Err(BsdeError::PicardDivergence {
                step,
                residual: f64::INFINITY,
            });
        }
        let diff = (next - y).abs();
        y = next;
        if diff <= options.tolerance * (1.0 + y.abs()) {
            return Ok((y, it));
        }
    }
    let residual = (base + driver.value(ctx, y, z, k) * dt - y).abs();
    Err(BsdeError::PicardDivergence { step, residual })
}

pub(crate) fn check_step_size<L: Lattice + ?Sized>(lat: &L, driver: &Driver, levels: usize) -> Result<()> {
    let c = driver.lambda_constant();
    for i in 0..levels {
        let product = lat.grid().dt(i) * c;
        if product >= 0.5 {
            return Err(BsdeError::StepSize { step: i, product });
        }
    }
    Ok(())
}

/// `xi` plus the dividend jump at `t_m`, at every node of level `m`.
pub fn lattice_terminal_values<L: Lattice + ?Sized>(
    lat: &L,
    level: usize,
    claim: &Claim,
    dividends: &DividendProcess,
) -> Result<Vec<f64>> {
    let jump = dividends.terminal_jump(lat.grid().time(level));
    (0..lat.level_len(level))
        .map(|i| Ok(claim.payoff(&lat.terminal_state(level, i))? + jump))
        .collect()
}

/// Backward induction from terminal values at level `m = increments.len()`;
/// `increments[i]` is the dividend credited at `t_i`.
pub fn solve_lattice_with<L: Lattice>(
    lat: &L,
    driver: &Driver,
    terminal: Vec<f64>,
    increments: &[f64],
    options: &TreeSolveOptions,
) -> Result<BsdeSolution> {
    let m = increments.len();
    solve_lattice_nodewise(
        lat,
        driver,
        m,
        terminal,
        |level, _| increments[level],
        |_, _| None,
        options,
    )
}

/// Backward induction with node-dependent dividend increments and an optional
/// stopping rule: where `stopped(level, idx)` is `Some(v)` the node is absorbed
/// with `Y = v` and `Z = K = 0`.
#[allow(clippy::too_many_arguments)]
pub fn solve_lattice_nodewise<L, I, S>(
    lat: &L,
    driver: &Driver,
    maturity: usize,
    terminal: Vec<f64>,
    increment: I,
    stopped: S,
    options: &TreeSolveOptions,
) -> Result<BsdeSolution>
where
    L: Lattice,
    I: Fn(usize, usize) -> f64 + Sync,
    S: Fn(usize, usize) -> Option<f64> + Sync,
{
    let m = maturity;
    if m > lat.grid().steps() || terminal.len() != lat.level_len(m) {
        return Err(BsdeError::Mismatch(format!(
            "{} terminal values at level {m} do not fit the lattice",
            terminal.len()
        )));
    }
    check_step_size(lat, driver, m)?;
    let mut y = vec![Vec::new(); m + 1];
    let mut z = vec![Vec::new(); m];
    let mut k = vec![Vec::new(); m];
    let mut iterations = vec![0; m];
    y[m] = terminal;
    for level in (0..m).rev() {
        let dt = lat.grid().dt(level);
        let y_next = &y[level + 1];
        let rows: Vec<Result<(f64, f64, f64, usize)>> = (0..lat.level_len(level))
            .into_par_iter()
            .map(|idx| {
                if let Some(v) = stopped(level, idx) {
                    return Ok((v, 0.0, 0.0, 0));
                }
                let (e, zz, kk) = one_step_estimates(lat, level, idx, y_next);
                let st = lat.state(level, idx);
                let ctx = DriverContext {
                    t: st.t,
                    lambda: st.lambda,
                    defaulted: st.defaulted,
                };
                let (yy, it) = picard_step(driver, &ctx, e + increment(level, idx), zz, kk, dt, options, level)?;
                Ok((yy, zz, kk, it))
            })
            .collect();
        let len = rows.len();
        let (mut ys, mut zs, mut ks) = (
            Vec::with_capacity(len),
            Vec::with_capacity(len),
            Vec::with_capacity(len),
        );
        for r in rows {
            let (a, b, c, it) = r?;
            ys.push(a);
            zs.push(b);
            ks.push(c);
            iterations[level] = iterations[level].max(it);
        }
        y[level] = ys;
        z[level] = zs;
        k[level] = ks;
    }
    Ok(BsdeSolution {
        method: Method::Tree,
        times: (0..=m).map(|i| lat.grid().time(i)).collect(),
        y,
        z,
        k,
        diagnostics: Diagnostics {
            picard_iterations: iterations,
            terminal_residual: 0.0,
            ..Default::default()
        },
    })
}

/// Solves the BSDE with generalized driver `g dt + dD` on a lattice up to its horizon.
pub fn solve_lattice<L: Lattice>(
    lat: &L,
    driver: &Driver,
    claim: &Claim,
    dividends: &DividendProcess,
) -> Result<BsdeSolution> {
    let grid = lat.grid();
    dividends.validate(grid.horizon())?;
    let n = grid.steps();
    let terminal = lattice_terminal_values(lat, n, claim, dividends)?;
    let xi: Vec<f64> = terminal.clone();
    let mut sol = solve_lattice_with(
        lat,
        driver,
        terminal,
        &dividends.increments(grid),
        &TreeSolveOptions::default(),
    )?;
    sol.diagnostics.terminal_residual = sol.y[n].iter().zip(&xi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(sol)
}

/// [`solve_lattice`] on the exact scenario tree.
pub fn solve_tree(
    tree: &ScenarioTree,
    driver: &Driver,
    claim: &Claim,
    dividends: &DividendProcess,
) -> Result<BsdeSolution> {
    solve_lattice(tree, driver, claim, dividends)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_tree, IntensityModel, TimeGrid, TreeOptions};

    fn tree(n: usize, lambda: f64) -> ScenarioTree {
        build_tree(
            &TimeGrid::uniform(1.0, n).unwrap(),
            &IntensityModel::Constant(lambda),
            TreeOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn constant_claim_is_flat() {
        let t = tree(4, 1.0);
        let sol = solve_tree(&t, &Driver::zero(), &Claim::Constant(2.5), &DividendProcess::none()).unwrap();
        for level in 0..4 {
            assert!(sol.y[level].iter().all(|v| (*v - 2.5).abs() < 1e-14));
            assert!(sol.z[level].iter().all(|v| v.abs() < 1e-13));
            assert!(sol.k[level].iter().all(|v| v.abs() < 1e-13));
        }
    }

    #[test]
    fn zero_driver_is_expectation() {
        let t = tree(5, 0.7);
        let claim = Claim::expression("w^2 + 3*n").unwrap();
        let sol = solve_tree(&t, &Driver::zero(), &claim, &DividendProcess::none()).unwrap();
        let direct: f64 = (0..t.level_len(5))
            .map(|i| t.state(5, i).probability * claim.payoff(&t.terminal_state(5, i)).unwrap())
            .sum();
        assert!((sol.y0() - direct).abs() < 1e-12);
        assert_eq!(sol.diagnostics.terminal_residual, 0.0);
    }

    #[test]
    fn post_default_k_vanishes() {
        let t = tree(6, 1.5);
        let d = Driver::lambda_linear(0.1, -0.2, 0.3, 0.5, 1.5).unwrap();
        let sol = solve_tree(
            &t,
            &d,
            &Claim::expression("exp(w) + n").unwrap(),
            &DividendProcess::none(),
        )
        .unwrap();
        for level in 0..6 {
            for idx in 0..t.level_len(level) {
                if t.state(level, idx).defaulted {
                    assert_eq!(sol.k[level][idx], 0.0);
                }
            }
        }
    }

    #[test]
    fn step_size_precondition() {
        let t = tree(2, 0.0);
        let d = Driver::lambda_linear(0.0, 1.2, 0.0, 0.0, 0.0).unwrap();
        assert!(matches!(
            solve_tree(&t, &d, &Claim::Constant(1.0), &DividendProcess::none()),
            Err(BsdeError::StepSize { step: 0, .. })
        ));
    }

    #[test]
    fn picard_failure_reports_step() {
        let t = tree(2, 0.0);
        // declared constant understates the true Lipschitz constant
        let d = Driver::custom(|_, y, _, _, _| 5.0 * y, 0.1, "5y").unwrap();
        let r = solve_tree(&t, &d, &Claim::Constant(1.0), &DividendProcess::none());
        assert!(matches!(r, Err(BsdeError::PicardDivergence { step: 1, .. })));
    }
}
