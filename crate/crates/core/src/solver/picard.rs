use rayon::prelude::*;

use super::tree::{check_step_size, one_step_estimates};
use super::{BsdeSolution, Diagnostics, Method};
use crate::drivers::{Driver, DriverContext};
use crate::error::{BsdeError, Result};
use crate::scenario::Lattice;

/// Iterates of the map `(U, V, L) -> (Y, Z, K)` solving the BSDE with the
/// frozen driver `g(s, U_s, V_s, L_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardReport {
    /// `18 (T + 1) C^2`.
    pub beta: f64,
    /// `||Phi^{k+1} - Phi^k||_beta` for `k = 0, 1, ...` (starting from `0`).
    pub distances: Vec<f64>,
    /// `distances[k + 1] / distances[k]`; 0 when both vanish.
    pub ratios: Vec<f64>,
    /// Iterations needed until the distance fell below `1e-14`, if it did.
    pub converged_after: Option<usize>,
    pub fixed_point: BsdeSolution,
}

fn apply<L: Lattice>(
    lat: &L,
    driver: &Driver,
    terminal: &[f64],
    increments: &[f64],
    frozen: Option<&BsdeSolution>,
) -> BsdeSolution {
    let m = increments.len();
    let mut y = vec![Vec::new(); m + 1];
    let mut z = vec![Vec::new(); m];
    let mut k = vec![Vec::new(); m];
    y[m] = terminal.to_vec();
    for level in (0..m).rev() {
        let dt = lat.grid().dt(level);
        let y_next = &y[level + 1];
        let rows: Vec<(f64, f64, f64)> = (0..lat.level_len(level))
            .into_par_iter()
            .map(|idx| {
                let (e, zz, kk) = one_step_estimates(lat, level, idx, y_next);
                let st = lat.state(level, idx);
                let ctx = DriverContext {
                    t: st.t,
                    lambda: st.lambda,
                    defaulted: st.defaulted,
                };
                let g = match frozen {
                    Some(f) => driver.value(&ctx, f.y[level][idx], f.z[level][idx], f.k[level][idx]),
                    None => driver.value(&ctx, 0.0, 0.0, 0.0),
                };
                (e + g * dt + increments[level], zz, kk)
            })
            .collect();
        y[level] = rows.iter().map(|r| r.0).collect();
        z[level] = rows.iter().map(|r| r.1).collect();
        k[level] = rows.iter().map(|r| r.2).collect();
    }
    BsdeSolution {
        method: Method::Tree,
        times: (0..=m).map(|i| lat.grid().time(i)).collect(),
        y,
        z,
        k,
        diagnostics: Diagnostics::default(),
    }
}

/// `||(Y, Z, K)||_beta^2 = sum_i e^{beta t_i} dt_i E[Y_i^2 + Z_i^2 + lambda_i K_i^2]`.
fn distance<L: Lattice>(lat: &L, a: &BsdeSolution, b: &BsdeSolution, beta: f64) -> f64 {
    let m = a.levels();
    let mut total = 0.0;
    for level in 0..m {
        let w = (beta * lat.grid().time(level)).exp() * lat.grid().dt(level);
        for idx in 0..lat.level_len(level) {
            let st = lat.state(level, idx);
            let dy = a.y[level][idx] - b.y[level][idx];
            let dz = a.z[level][idx] - b.z[level][idx];
            let dk = a.k[level][idx] - b.k[level][idx];
            total += w * st.probability * (dy * dy + dz * dz + st.lambda * dk * dk);
        }
    }
    total.sqrt()
}

/// Runs at least `iterations` Picard iterations from `(0, 0, 0)` and continues
/// (up to 500) until successive iterates agree to `1e-14`.
pub fn picard_diagnostic<L: Lattice>(
    lat: &L,
    driver: &Driver,
    terminal: &[f64],
    increments: &[f64],
    iterations: usize,
) -> Result<PicardReport> {
    if iterations < 3 {
        return Err(BsdeError::InvalidArgument(
            "at least three iterations are required".into(),
        ));
    }
    let m = increments.len();
    check_step_size(lat, driver, m)?;
    let horizon = lat.grid().time(m);
    let c = driver.lambda_constant();
    let beta = 18.0 * (horizon + 1.0) * c * c;
    let mut current = apply(lat, driver, terminal, increments, None);
    let mut distances = Vec::new();
    let mut converged_after = None;
    for it in 1..=500 {
        let next = apply(lat, driver, terminal, increments, Some(&current));
        let d = distance(lat, &next, &current, beta);
        if !d.is_finite() {
            return Err(BsdeError::PicardDivergence { step: it, residual: d });
        }
        distances.push(d);
        current = next;
        if d <= 1e-14 * (1.0 + current.y0().abs()) && converged_after.is_none() {
            converged_after = Some(it);
        }
        if converged_after.is_some() && it >= iterations {
            break;
        }
    }
    let ratios = distances
        .windows(2)
        .map(|w| if w[0] == 0.0 { 0.0 } else { w[1] / w[0] })
        .collect();
    Ok(PicardReport {
        beta,
        distances,
        ratios,
        converged_after,
        fixed_point: current,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_tree, IntensityModel, TimeGrid, TreeOptions};
    use crate::solver::{lattice_terminal_values, solve_tree, Claim, DividendProcess};

    #[test]
    fn zero_driver_converges_immediately() {
        let t = build_tree(
            &TimeGrid::uniform(1.0, 4).unwrap(),
            &IntensityModel::Constant(1.0),
            TreeOptions::default(),
        )
        .unwrap();
        let term = lattice_terminal_values(&t, 4, &Claim::DefaultIndicator, &DividendProcess::none()).unwrap();
        let r = picard_diagnostic(&t, &Driver::zero(), &term, &[0.0; 4], 3).unwrap();
        assert_eq!(r.converged_after, Some(1));
        assert_eq!(r.distances[0], 0.0);
    }

    #[test]
    fn linear_driver_fixed_point_matches_solver() {
        let t = build_tree(
            &TimeGrid::uniform(1.0, 6).unwrap(),
            &IntensityModel::Constant(1.0),
            TreeOptions::default(),
        )
        .unwrap();
        let d = Driver::lambda_linear(0.3, -0.5, 0.4, 0.6, 1.0).unwrap();
        let claim = Claim::expression("w - n").unwrap();
        let none = DividendProcess::none();
        let term = lattice_terminal_values(&t, 6, &claim, &none).unwrap();
        let r = picard_diagnostic(&t, &d, &term, &[0.0; 6], 5).unwrap();
        let s = solve_tree(&t, &d, &claim, &none).unwrap();
        assert!(r.fixed_point.max_y_difference(&s) < 1e-10);
        assert!(r.ratios.iter().take(5).any(|q| *q < 0.75));
    }
}
