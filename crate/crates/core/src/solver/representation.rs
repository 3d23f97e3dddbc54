use rayon::prelude::*;

use super::claim::{path_terminal_state, Claim};
use super::dividends::DividendProcess;
use super::tree::K_THRESHOLD;
use super::{BsdeSolution, Diagnostics, Method};
use crate::adjoint::{doleans_dade_with, AdjointForm};
use crate::drivers::{Driver, LinearCoefficients};
use crate::error::{BsdeError, Result};
use crate::scenario::{Child, Lattice, NodeState, ScenarioSet};
use crate::stats::MeanEstimate;

/// One-step adjoint factor on a lattice and the running-term divisor:
/// `(1 + beta dW + gamma lambda dt (dN - m) / (m (1 - m))) / (1 - delta dt)`.
///
/// With `m` the node's one-step default probability this is the exact
/// discrete counterpart of the affine adjoint for the implicit scheme.
fn lattice_factor(c: &LinearCoefficients, st: &NodeState, child: &Child, m: f64, dt: f64) -> f64 {
    let jump = if !st.defaulted && st.lambda * dt > K_THRESHOLD && m > 0.0 && m < 1.0 {
        c.gamma * st.lambda * dt * (child.dn - m) / (m * (1.0 - m))
    } else {
        0.0
    };
    (1.0 + c.beta * child.dw + jump) / (1.0 - c.delta * dt)
}

fn coefficients(driver: &Driver, st: &NodeState) -> Result<LinearCoefficients> {
    driver.linear_at(st.t, st.defaulted).ok_or(BsdeError::NotLinear)
}

/// Per-node `Y_i = E[Gamma_{i,m} xi + sum_{j >= i} Gamma_{i,j} (phi_j dt + dD_j) / (1 - delta_j dt) | node]`
/// by forward propagation of the adjoint over each node's descendants.
pub fn linear_representation_lattice<L: Lattice>(
    lat: &L,
    driver: &Driver,
    terminal: &[f64],
    increments: &[f64],
) -> Result<BsdeSolution> {
    let m = increments.len();
    if terminal.len() != lat.level_len(m) {
        return Err(BsdeError::Mismatch(
            "terminal values do not match the lattice level".into(),
        ));
    }
    let mut y = Vec::with_capacity(m + 1);
    for level in 0..m {
        let row: Result<Vec<f64>> = (0..lat.level_len(level))
            .into_par_iter()
            .map(|idx| represent_node(lat, driver, terminal, increments, level, idx))
            .collect();
        y.push(row?);
    }
    y.push(terminal.to_vec());
    Ok(BsdeSolution {
        method: Method::Representation,
        times: (0..=m).map(|i| lat.grid().time(i)).collect(),
        y,
        z: Vec::new(),
        k: Vec::new(),
        diagnostics: Diagnostics::default(),
    })
}

fn represent_node<L: Lattice>(
    lat: &L,
    driver: &Driver,
    terminal: &[f64],
    increments: &[f64],
    start: usize,
    idx: usize,
) -> Result<f64> {
    let m = increments.len();
    // weight = conditional probability times adjoint, indexed within the
    // descendant range of each level
    let mut range = lat.descendants(start, idx, start);
    let mut weights = vec![0.0; range.len()];
    weights[idx - range.start] = 1.0;
    let mut total = 0.0;
    for level in start..m {
        let dt = lat.grid().dt(level);
        let next_range = lat.descendants(start, idx, level + 1);
        let mut next = vec![0.0; next_range.len()];
        for node in range.clone() {
            let w = weights[node - range.start];
            if w == 0.0 {
                continue;
            }
            let st = lat.state(level, node);
            let c = coefficients(driver, &st)?;
            total += w * (c.phi * dt + increments[level]) / (1.0 - c.delta * dt);
            let kids = lat.children(level, node);
            let p_def: f64 = kids.iter().map(|k| k.prob * k.dn).sum();
            for child in kids.iter() {
                next[child.index - next_range.start] += w * child.prob * lattice_factor(&c, &st, child, p_def, dt);
            }
        }
        range = next_range;
        weights = next;
    }
    for node in range.clone() {
        total += weights[node - range.start] * terminal[node];
    }
    Ok(total)
}

/// Monte Carlo `Y_0 = E[Gamma_T xi + sum_j Gamma_j (phi_j dt + dD_j)]` with the
/// exponential-form adjoint.
pub fn linear_representation_paths(
    set: &ScenarioSet,
    driver: &Driver,
    claim: &Claim,
    dividends: &DividendProcess,
) -> Result<MeanEstimate> {
    let grid = set.grid();
    dividends.validate(grid.horizon())?;
    if !driver.is_linear() {
        return Err(BsdeError::NotLinear);
    }
    let inc = dividends.increments(grid);
    let jump = dividends.terminal_jump(grid.horizon());
    let n = grid.steps();
    let values: Result<Vec<f64>> = (0..set.len())
        .into_par_iter()
        .map(|p| {
            let path = set.path(p);
            let coeff = |i: usize| {
                driver
                    .linear_at(grid.time(i), path.defaulted_at(i))
                    .expect("linear driver")
            };
            let gamma = doleans_dade_with(&path, 0, AdjointForm::Exponential, |i| {
                let c = coeff(i);
                (c.delta, c.beta, c.gamma)
            });
            let xi = claim.payoff(&path_terminal_state(set, &path))? + jump;
            let mut v = gamma.at(n) * xi;
            for i in 0..n {
                v += gamma.at(i) * (coeff(i).phi * grid.dt(i) + inc[i]);
            }
            Ok(v)
        })
        .collect();
    Ok(MeanEstimate::from_samples(&values?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_tree, simulate_paths, IntensityModel, TimeGrid, TreeOptions};
    use crate::solver::{lattice_terminal_values, solve_lattice_with, TreeSolveOptions};

    #[test]
    fn matches_backward_induction() {
        let g = TimeGrid::uniform(1.0, 5).unwrap();
        let t = build_tree(&g, &IntensityModel::Constant(0.9), TreeOptions::default()).unwrap();
        let d = Driver::lambda_linear(0.2, -0.3, 0.4, -0.6, 0.9).unwrap();
        let claim = Claim::expression("max(w, 0) + 2*n").unwrap();
        let div = DividendProcess::none().with_constant_rate(0.5).with_jump(0.5, 1.0);
        let term = lattice_terminal_values(&t, 5, &claim, &div).unwrap();
        let inc = div.increments(&g);
        let a = solve_lattice_with(&t, &d, term.clone(), &inc, &TreeSolveOptions::default()).unwrap();
        let b = linear_representation_lattice(&t, &d, &term, &inc).unwrap();
        assert!(a.max_y_difference(&b) < 1e-12);
    }

    #[test]
    fn trivial_path_cases() {
        let g = TimeGrid::uniform(1.0, 20).unwrap();
        let set = simulate_paths(&g, &IntensityModel::Constant(0.5), 1000, 3).unwrap();
        let est = linear_representation_paths(
            &set,
            &Driver::lambda_linear(0.0, -0.05, 0.0, 0.0, 0.5).unwrap(),
            &Claim::Constant(1.0),
            &DividendProcess::none(),
        )
        .unwrap();
        assert!((est.mean - (-0.05f64).exp()).abs() < 1e-12);
        let nl = Driver::from_expr("y^2", 1.0).unwrap();
        assert!(matches!(
            linear_representation_paths(&set, &nl, &Claim::Constant(1.0), &DividendProcess::none()),
            Err(BsdeError::NotLinear)
        ));
    }
}
