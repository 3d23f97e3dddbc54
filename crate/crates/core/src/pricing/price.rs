use std::io::{self, Write};

use rayon::prelude::*;

use super::market::{hedge_from_solution, MarketModel};
use crate::adjoint::{doleans_dade_with, AdjointForm};
use crate::drivers::Driver;
use crate::error::{BsdeError, Result};
use crate::scenario::{Lattice, ScenarioSet};
use crate::solver::{
    lattice_terminal_values, path_terminal_state, solve_lattice, solve_lattice_with, solve_lsmc, BsdeSolution, Claim,
    DividendProcess, LsmcOptions, Method, TreeSolveOptions,
};
use crate::stats::MeanEstimate;

/// One row of the price curve: level means of the price and of the hedge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub t: f64,
    pub price: f64,
    pub z: f64,
    pub k: f64,
    pub phi1: f64,
    pub phi2: f64,
}

/// Terminal replication error statistics of `V_T - xi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicationStats {
    pub mean: f64,
    /// `sqrt(E[(V_T - xi)^2])`.
    pub l2: f64,
    pub max_abs: f64,
    /// `l2 / sqrt(E[xi^2])`.
    pub relative_l2: f64,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub struct PricingReport {
    pub method: Method,
    pub seed: Option<u64>,
    pub horizon: f64,
    pub steps: usize,
    pub price: f64,
    /// Monte Carlo standard error.
    pub std_error: Option<f64>,
    pub curve: Vec<CurvePoint>,
    pub replication: Option<ReplicationStats>,
    pub warnings: Vec<String>,
}

impl PricingReport {
    /// Writes `t,price,Z,K,phi1,phi2`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,price,Z,K,phi1,phi2")?;
        for c in &self.curve {
            writeln!(out, "{},{},{},{},{},{}", c.t, c.price, c.z, c.k, c.phi1, c.phi2)?;
        }
        Ok(())
    }
}

/// Probability-weighted level means of `(Y, Z, K, phi1, phi2)`.
fn lattice_curve<L: Lattice>(lat: &L, sol: &BsdeSolution, market: Option<&MarketModel>) -> Result<Vec<CurvePoint>> {
    let hedge = market.map(|m| hedge_from_solution(lat, sol, m)).transpose()?;
    let m = sol.levels();
    let mut curve = Vec::with_capacity(m + 1);
    for level in 0..=m {
        let mut acc = [0.0; 5];
        let mut mass = 0.0;
        for idx in 0..lat.level_len(level) {
            let p = lat.state(level, idx).probability;
            mass += p;
            acc[0] += p * sol.y[level][idx];
            if level < m {
                acc[1] += p * sol.z[level][idx];
                acc[2] += p * sol.k[level][idx];
                if let Some(h) = &hedge {
                    acc[3] += p * h.phi1[level][idx];
                    acc[4] += p * h.phi2[level][idx];
                }
            }
        }
        let v = acc.map(|a| a / mass);
        curve.push(CurvePoint {
            t: sol.times[level],
            price: v[0],
            z: v[1],
            k: v[2],
            phi1: v[3],
            phi2: v[4],
        });
    }
    Ok(curve)
}

/// Forward state prices: `pi(child) += pi(node) q(child) / (1 + r dt)` with
/// `q = p (1 - theta1 dW - theta2 lambda dt (dN - m) / (m (1 - m)))`, the
/// lattice counterpart of `e^{-int r} zeta`.
pub fn state_prices<L: Lattice>(lat: &L, market: &MarketModel, levels: usize) -> Vec<Vec<f64>> {
    let grid = lat.grid();
    let mut out = vec![vec![1.0]];
    for level in 0..levels {
        let t = grid.time(level);
        let dt = grid.dt(level);
        let disc = 1.0 / (1.0 + market.r(t) * dt);
        let mut next = vec![0.0; lat.level_len(level + 1)];
        for idx in 0..lat.level_len(level) {
            let pi = out[level][idx];
            if pi == 0.0 {
                continue;
            }
            let st = lat.state(level, idx);
            let kids = lat.children(level, idx);
            let m: f64 = kids.iter().map(|c| c.prob * c.dn).sum();
            let jump = !st.defaulted && st.lambda * dt > 1e-12 && m > 0.0 && m < 1.0;
            let (th1, th2) = (market.theta1(t), market.theta2(t, st.defaulted));
            for c in kids.iter() {
                let mut f = 1.0 - th1 * c.dw;
                if jump {
                    f -= th2 * st.lambda * dt * (c.dn - m) / (m * (1.0 - m));
                }
                next[c.index] += pi * c.prob * f * disc;
            }
        }
        out.push(next);
    }
    out
}

/// Perfect-market price `E[e^{-int r} zeta_T xi + int e^{-int r} zeta dD]` as
/// an exact lattice sum over state prices.
pub fn perfect_market_price_lattice<L: Lattice>(
    lat: &L,
    market: &MarketModel,
    claim: &Claim,
    dividends: &DividendProcess,
) -> Result<f64> {
    let grid = lat.grid();
    market.check_grid(grid)?;
    dividends.validate(grid.horizon())?;
    let n = grid.steps();
    let pi = state_prices(lat, market, n);
    let terminal = lattice_terminal_values(lat, n, claim, dividends)?;
    let inc = dividends.increments(grid);
    let mut price: f64 = pi[n].iter().zip(&terminal).map(|(a, b)| a * b).sum();
    for level in 0..n {
        let disc = 1.0 / (1.0 + market.r(grid.time(level)) * grid.dt(level));
        price += pi[level].iter().sum::<f64>() * inc[level] * disc;
    }
    Ok(price)
}

/// Monte Carlo perfect-market price with the exponential-form density and
/// exact discounting of the piecewise-constant rate.
pub fn perfect_market_price_paths(
    set: &ScenarioSet,
    market: &MarketModel,
    claim: &Claim,
    dividends: &DividendProcess,
) -> Result<PricingReport> {
    let grid = set.grid();
    market.check_grid(grid)?;
    dividends.validate(grid.horizon())?;
    let n = grid.steps();
    let inc = dividends.increments(grid);
    let jump = dividends.terminal_jump(grid.horizon());
    let mut discount = vec![1.0];
    for i in 0..n {
        let d = discount[i] * (-market.r(grid.time(i)) * grid.dt(i)).exp();
        discount.push(d);
    }
    let values: Vec<f64> = (0..set.len())
        .into_par_iter()
        .map(|p| {
            let path = set.path(p);
            let zeta = doleans_dade_with(&path, 0, AdjointForm::Exponential, |i| {
                let t = grid.time(i);
                (0.0, -market.theta1(t), -market.theta2(t, path.defaulted_at(i)))
            });
            let xi = claim.payoff(&path_terminal_state(set, &path))? + jump;
            let mut v = discount[n] * zeta.at(n) * xi;
            for i in 0..n {
                v += discount[i] * zeta.at(i) * inc[i];
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let est = MeanEstimate::from_samples(&values);
    Ok(PricingReport {
        method: Method::Representation,
        seed: Some(set.seed()),
        horizon: grid.horizon(),
        steps: n,
        price: est.mean,
        std_error: Some(est.std_error),
        curve: Vec::new(),
        replication: None,
        warnings: Vec::new(),
    })
}

/// `E^{g,D}_{t,T}(xi)` on a lattice by backward induction, with the hedge
/// curve when a market is given.
pub fn price_lattice<L: Lattice>(
    lat: &L,
    market: Option<&MarketModel>,
    driver: &Driver,
    claim: &Claim,
    dividends: &DividendProcess,
) -> Result<(PricingReport, BsdeSolution)> {
    if let Some(m) = market {
        m.check_grid(lat.grid())?;
    }
    let sol = solve_lattice(lat, driver, claim, dividends)?;
    let report = PricingReport {
        method: Method::Tree,
        seed: None,
        horizon: lat.grid().horizon(),
        steps: lat.grid().steps(),
        price: sol.y0(),
        std_error: None,
        curve: lattice_curve(lat, &sol, market)?,
        replication: None,
        warnings: sol.diagnostics.warnings.clone(),
    };
    Ok((report, sol))
}

/// `E^{g,D}_{0,T}(xi)` by regression Monte Carlo; the curve holds sample means.
pub fn price_paths(
    set: &ScenarioSet,
    market: Option<&MarketModel>,
    driver: &Driver,
    claim: &Claim,
    dividends: &DividendProcess,
    options: &LsmcOptions,
) -> Result<PricingReport> {
    if let Some(m) = market {
        m.check_grid(set.grid())?;
    }
    let sol = solve_lsmc(set, driver, claim, dividends, options)?;
    let grid = set.grid();
    let curve = sol
        .mean_curve
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let (z, k) = if i == 0 { (sol.z0, sol.k0) } else { (f64::NAN, f64::NAN) };
            let (phi1, phi2) = match market {
                Some(m) if i == 0 => ((z + m.sigma2(0.0) * k) / m.sigma1(0.0), -k),
                _ => (f64::NAN, f64::NAN),
            };
            CurvePoint {
                t: grid.time(i),
                price: *y,
                z,
                k,
                phi1,
                phi2,
            }
        })
        .collect();
    Ok(PricingReport {
        method: Method::Lsmc,
        seed: Some(set.seed()),
        horizon: grid.horizon(),
        steps: grid.steps(),
        price: sol.y0,
        std_error: Some(sol.std_error),
        curve,
        replication: None,
        warnings: sol.diagnostics.warnings,
    })
}

/// `rho_0(xi, S) = -E^g_{0,S}(xi)` with no dividends; `S` must be a grid time.
pub fn risk_measure<L: Lattice>(lat: &L, driver: &Driver, claim: &Claim, maturity: f64) -> Result<f64> {
    let grid = lat.grid();
    let m = grid
        .index_of(maturity)
        .ok_or_else(|| BsdeError::InvalidArgument(format!("maturity {maturity} is not a grid time")))?;
    let none = DividendProcess::none();
    let terminal = lattice_terminal_values(lat, m, claim, &none)?;
    let sol = solve_lattice_with(lat, driver, terminal, &vec![0.0; m], &TreeSolveOptions::default())?;
    Ok(-sol.y0())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_tree, simulate_paths, IntensityModel, ScenarioTree, TimeGrid, TreeOptions};
    use crate::solver::Asset;

    fn market() -> MarketModel {
        MarketModel::from_risk_premia(0.04, 0.2, 0.3, 0.3, 0.5, IntensityModel::Constant(1.0), 1.0, (1.0, 1.0)).unwrap()
    }

    fn tree(m: &MarketModel, n: usize) -> ScenarioTree {
        let g = TimeGrid::uniform(1.0, n).unwrap();
        let t = build_tree(&g, m.intensity(), TreeOptions::default()).unwrap();
        let step = m.asset_step(&g);
        t.with_assets(m.initial_prices(), &step).unwrap()
    }

    #[test]
    fn bond_replicates_itself() {
        let m = market();
        let t = tree(&m, 6);
        let p =
            perfect_market_price_lattice(&t, &m, &Claim::expression("s0").unwrap(), &DividendProcess::none()).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn state_prices_match_backward_induction() {
        let m = market();
        let t = tree(&m, 6);
        let claim = Claim::Call {
            asset: Asset::S1,
            strike: 1.0,
        };
        let div = DividendProcess::none().with_constant_rate(0.1).with_jump(0.5, 0.2);
        let a = perfect_market_price_lattice(&t, &m, &claim, &div).unwrap();
        let (r, _) = price_lattice(&t, Some(&m), &m.perfect_market_driver().unwrap(), &claim, &div).unwrap();
        assert!((a - r.price).abs() < 1e-12, "{a} vs {}", r.price);
        assert_eq!(r.curve.len(), 7);
    }

    #[test]
    fn risk_measure_trivial_cases() {
        let m = market();
        let t = tree(&m, 4);
        assert_eq!(
            risk_measure(&t, &Driver::zero(), &Claim::Constant(0.0), 0.5).unwrap(),
            0.0
        );
        assert!((risk_measure(&t, &Driver::zero(), &Claim::Constant(2.0), 1.0).unwrap() + 2.0).abs() < 1e-14);
        assert!(risk_measure(&t, &Driver::zero(), &Claim::Constant(2.0), 0.3).is_err());
    }

    #[test]
    fn unit_dividend_has_unit_price() {
        let m = MarketModel::from_risk_premia(0.0, 0.2, 0.3, 0.3, 0.5, IntensityModel::Constant(1.0), 1.0, (1.0, 1.0))
            .unwrap();
        let g = TimeGrid::uniform(1.0, 20).unwrap();
        let set = simulate_paths(&g, m.intensity(), 50_000, 3).unwrap();
        let r = perfect_market_price_paths(
            &set,
            &m,
            &Claim::Constant(0.0),
            &DividendProcess::none().with_jump(0.5, 1.0),
        )
        .unwrap();
        assert!((r.price - 1.0).abs() <= 3.0 * r.std_error.unwrap(), "{r:?}");
    }
}
