use rayon::prelude::*;

use super::market::{HedgeStrategy, MarketModel};
use super::price::ReplicationStats;
use crate::drivers::{Driver, DriverContext};
use crate::error::{BsdeError, Result};
use crate::scenario::{Lattice, RecombiningTree, ScenarioSet};
use crate::solver::{lattice_terminal_values, path_terminal_state, Claim, DividendProcess};
use crate::stats::MeanEstimate;

fn stats(errors: &[f64], weights: Option<&[f64]>, payoffs: &[f64]) -> ReplicationStats {
    let (mean, l2, xi2) = match weights {
        Some(w) => {
            let m: f64 = errors.iter().zip(w).map(|(e, p)| e * p).sum();
            let l2: f64 = errors.iter().zip(w).map(|(e, p)| e * e * p).sum();
            let x2: f64 = payoffs.iter().zip(w).map(|(x, p)| x * x * p).sum();
            (m, l2, x2)
        }
        None => {
            let n = errors.len() as f64;
            let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
            let x2: Vec<f64> = payoffs.iter().map(|x| x * x).collect();
            (
                MeanEstimate::from_samples(errors).mean,
                sq.iter().sum::<f64>() / n,
                x2.iter().sum::<f64>() / n,
            )
        }
    };
    let l2 = l2.sqrt();
    ReplicationStats {
        mean,
        l2,
        max_abs: errors.iter().fold(0.0, |a, e| a.max(e.abs())),
        relative_l2: if xi2 > 0.0 { l2 / xi2.sqrt() } else { l2 },
        samples: errors.len(),
    }
}

/// Forward wealth `V_{i+1} = V_i - g(t_i, V_i, Z_i, K_i) dt - dD_i + Z_i dW + K_i (dN - m)`
/// on every lattice node, with `(Z, K)` recovered from the strategy and `m` the
/// node's one-step default probability. Where several parents reach a node
/// their values are averaged with their transition masses.
///
/// Returns the statistics of `V_T - xi` under the lattice probabilities and
/// the wealth on every node.
pub fn replicate_lattice<L: Lattice>(
    lat: &L,
    market: &MarketModel,
    driver: &Driver,
    strategy: &HedgeStrategy,
    x0: f64,
    dividends: &DividendProcess,
    claim: &Claim,
) -> Result<(ReplicationStats, Vec<Vec<f64>>)> {
    let grid = lat.grid();
    let n = grid.steps();
    if strategy.phi1.len() != n {
        return Err(BsdeError::Mismatch(format!(
            "strategy covers {} steps, the lattice has {n}",
            strategy.phi1.len()
        )));
    }
    let (z, k) = strategy.to_zk(market);
    let inc = dividends.increments(grid);
    let mut v = vec![vec![x0]];
    for level in 0..n {
        let dt = grid.dt(level);
        let mut next = vec![0.0; lat.level_len(level + 1)];
        let mut mass = vec![0.0; lat.level_len(level + 1)];
        for idx in 0..lat.level_len(level) {
            let st = lat.state(level, idx);
            let kids = lat.children(level, idx);
            let m: f64 = kids.iter().map(|c| c.prob * c.dn).sum();
            let ctx = DriverContext {
                t: st.t,
                lambda: st.lambda,
                defaulted: st.defaulted,
            };
            let (zz, kk) = (z[level][idx], if st.defaulted { 0.0 } else { k[level][idx] });
            let vi = v[level][idx];
            let drift = vi - driver.evaluate(&ctx, vi, zz, kk)? * dt - inc[level];
            for c in kids.iter() {
                let w = st.probability * c.prob;
                next[c.index] += w * (drift + zz * c.dw + kk * (c.dn - m));
                mass[c.index] += w;
            }
        }
        v.push(
            next.iter()
                .zip(&mass)
                .map(|(a, w)| if *w > 0.0 { a / w } else { 0.0 })
                .collect(),
        );
    }
    let xi = lattice_terminal_values(lat, n, claim, dividends)?;
    let errors: Vec<f64> = v[n].iter().zip(&xi).map(|(a, b)| a - b).collect();
    let probs: Vec<f64> = (0..lat.level_len(n)).map(|i| lat.state(n, i).probability).collect();
    Ok((stats(&errors, Some(&probs), &xi), v))
}

/// Replays a lattice strategy on Monte Carlo paths: `phi` is interpolated
/// linearly in `W` within the path's default regime and the wealth follows the
/// Euler recursion with `dM = dN - lambda dt`.
#[allow(clippy::too_many_arguments)]
pub fn replicate_paths(
    set: &ScenarioSet,
    lattice: &RecombiningTree,
    market: &MarketModel,
    driver: &Driver,
    strategy: &HedgeStrategy,
    x0: f64,
    dividends: &DividendProcess,
    claim: &Claim,
) -> Result<ReplicationStats> {
    let grid = set.grid();
    let n = grid.steps();
    if lattice.grid().steps() != n || (lattice.grid().horizon() - grid.horizon()).abs() > 1e-12 {
        return Err(BsdeError::Mismatch("lattice and paths use different grids".into()));
    }
    if strategy.phi1.len() != n {
        return Err(BsdeError::Mismatch("strategy does not cover the grid".into()));
    }
    let (z, k) = strategy.to_zk(market);
    let inc = dividends.increments(grid);
    let jump = dividends.terminal_jump(grid.horizon());
    let rows: Vec<(f64, f64)> = (0..set.len())
        .into_par_iter()
        .map(|p| {
            let path = set.path(p);
            let mut v = x0;
            let mut w = 0.0;
            for i in 0..n {
                let t = grid.time(i);
                let defaulted = path.defaulted_at(i);
                let (lo, hi, f) = lattice.locate(i, w, defaulted);
                let zz = (1.0 - f) * z[i][lo] + f * z[i][hi];
                let kk = if defaulted {
                    0.0
                } else {
                    (1.0 - f) * k[i][lo] + f * k[i][hi]
                };
                let ctx = DriverContext {
                    t,
                    lambda: path.lambda(i),
                    defaulted,
                };
                let dw = path.dw(i);
                v += -driver.evaluate(&ctx, v, zz, kk)? * grid.dt(i) - inc[i] + zz * dw + kk * path.dm(i);
                w += dw;
            }
            let xi = claim.payoff(&path_terminal_state(set, &path))? + jump;
            Ok((v - xi, xi))
        })
        .collect::<Result<_>>()?;
    let (errors, payoffs): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    Ok(stats(&errors, None, &payoffs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing::{hedge_from_solution, price_lattice};
    use crate::scenario::{build_tree, Branching, IntensityModel, TimeGrid, TreeOptions};
    use crate::solver::Asset;

    #[test]
    fn zero_strategy_holds_constant() {
        let m = MarketModel::from_risk_premia(0.0, 0.2, 0.3, 0.0, 0.0, IntensityModel::Constant(1.0), 1.0, (1.0, 1.0))
            .unwrap();
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        let t = build_tree(&g, m.intensity(), TreeOptions::default()).unwrap();
        let zero = HedgeStrategy {
            times: (0..4).map(|i| g.time(i)).collect(),
            phi1: (0..4).map(|l| vec![0.0; t.level_len(l)]).collect(),
            phi2: (0..4).map(|l| vec![0.0; t.level_len(l)]).collect(),
        };
        let (s, _) = replicate_lattice(
            &t,
            &m,
            &Driver::zero(),
            &zero,
            2.0,
            &DividendProcess::none(),
            &Claim::Constant(2.0),
        )
        .unwrap();
        assert_eq!(s.max_abs, 0.0);
    }

    #[test]
    fn complete_tree_replicates_nonlinear_driver() {
        let m = MarketModel::from_risk_premia(
            0.02,
            0.25,
            0.3,
            0.2,
            0.4,
            IntensityModel::Constant(0.8),
            1.0,
            (1.0, 1.0),
        )
        .unwrap();
        let g = TimeGrid::uniform(1.0, 7).unwrap();
        let opts = TreeOptions {
            branching: Branching::Complete,
            ..Default::default()
        };
        let t = build_tree(&g, m.intensity(), opts)
            .unwrap()
            .with_assets(m.initial_prices(), &m.asset_step(&g))
            .unwrap();
        let d = Driver::from_expr("-0.02*y - 0.2*z + 0.3*abs(z) + 0.5*lambda*max(k, 0)", 1.0).unwrap();
        let claim = Claim::Put {
            asset: Asset::S1,
            strike: 1.0,
        };
        let div = DividendProcess::none().with_constant_rate(0.05);
        let (r, sol) = price_lattice(&t, Some(&m), &d, &claim, &div).unwrap();
        let h = hedge_from_solution(&t, &sol, &m).unwrap();
        let (s, _) = replicate_lattice(&t, &m, &d, &h, r.price, &div, &claim).unwrap();
        assert!(s.max_abs < 1e-10, "{s:?}");
    }
}
