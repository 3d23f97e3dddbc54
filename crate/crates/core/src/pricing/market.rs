use std::sync::Arc;

use rayon::prelude::*;

use crate::drivers::{large_investor_driver, theta2_from_drifts, Coefficient, Driver};
use crate::error::{BsdeError, Result};
use crate::scenario::{Child, IntensityModel, Lattice, NodeState, ScenarioSet, TimeGrid};
use crate::solver::{BsdeSolution, GammaCandidate};

/// Points per unit of time at which declared coefficient bounds are sampled.
const BOUND_SAMPLES: usize = 1000;

/// Riskless asset `S0`, a Brownian asset `S1` and an asset `S2` with total
/// default, all with deterministic coefficients and a deterministic intensity.
#[derive(Clone, Debug)]
pub struct MarketModel {
    r: Coefficient,
    mu1: Coefficient,
    sigma1: Coefficient,
    mu2: Coefficient,
    sigma2: Coefficient,
    intensity: IntensityModel,
    horizon: f64,
    s1_0: f64,
    s2_0: f64,
}

impl MarketModel {
    /// Coefficients are read at `(t, pre-default)`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        r: impl Into<Coefficient>,
        mu1: impl Into<Coefficient>,
        sigma1: impl Into<Coefficient>,
        mu2: impl Into<Coefficient>,
        sigma2: impl Into<Coefficient>,
        intensity: IntensityModel,
        horizon: f64,
        initial: (f64, f64),
    ) -> Result<Self> {
        if !intensity.is_deterministic() {
            return Err(BsdeError::InvalidIntensity(
                "the market model needs a deterministic intensity so that theta2 is deterministic".into(),
            ));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(BsdeError::InvalidArgument(format!(
                "horizon must be > 0, got {horizon}"
            )));
        }
        let m = Self {
            r: r.into(),
            mu1: mu1.into(),
            sigma1: sigma1.into(),
            mu2: mu2.into(),
            sigma2: sigma2.into(),
            intensity,
            horizon,
            s1_0: initial.0,
            s2_0: initial.1,
        };
        for t in m.sample_times() {
            let (s1, s2) = (m.sigma1(t), m.sigma2(t));
            if !(s1 > 0.0 && s2 > 0.0) {
                return Err(BsdeError::InvalidArgument(format!(
                    "volatilities must be > 0, got sigma1 = {s1}, sigma2 = {s2} at t = {t}"
                )));
            }
            m.intensity.rate(t, 0.0)?;
        }
        if !(m.s1_0 > 0.0 && m.s2_0 > 0.0) {
            return Err(BsdeError::InvalidArgument("initial prices must be > 0".into()));
        }
        Ok(m)
    }

    /// Market with prescribed risk premia: `mu1 = r + sigma1 theta1` and
    /// `mu2 = r + sigma2 theta1 - theta2 lambda`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_risk_premia(
        r: f64,
        sigma1: f64,
        sigma2: f64,
        theta1: f64,
        theta2: f64,
        intensity: IntensityModel,
        horizon: f64,
        initial: (f64, f64),
    ) -> Result<Self> {
        let lambda = intensity.clone();
        let mu2 = Coefficient::function(
            move |t, _| r + sigma2 * theta1 - theta2 * lambda.rate(t, 0.0).unwrap_or(0.0),
            r.abs() + sigma2 * theta1.abs() + theta2.abs() * intensity.lambda_max(),
        );
        Self::new(r, r + sigma1 * theta1, sigma1, mu2, sigma2, intensity, horizon, initial)
    }

    fn sample_times(&self) -> impl Iterator<Item = f64> + '_ {
        let n = ((self.horizon * BOUND_SAMPLES as f64).ceil() as usize).max(1);
        (0..=n).map(move |i| self.horizon * i as f64 / n as f64)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn intensity(&self) -> &IntensityModel {
        &self.intensity
    }

    pub fn initial_prices(&self) -> [f64; 3] {
        [1.0, self.s1_0, self.s2_0]
    }

    pub fn r(&self, t: f64) -> f64 {
        self.r.at(t, false)
    }

    pub fn mu1(&self, t: f64) -> f64 {
        self.mu1.at(t, false)
    }

    pub fn sigma1(&self, t: f64) -> f64 {
        self.sigma1.at(t, false)
    }

    pub fn mu2(&self, t: f64) -> f64 {
        self.mu2.at(t, false)
    }

    pub fn sigma2(&self, t: f64) -> f64 {
        self.sigma2.at(t, false)
    }

    pub fn lambda(&self, t: f64) -> f64 {
        self.intensity.rate(t, 0.0).unwrap_or(0.0)
    }

    /// `(mu1 - r) / sigma1`.
    pub fn theta1(&self, t: f64) -> f64 {
        (self.mu1(t) - self.r(t)) / self.sigma1(t)
    }

    /// `-(mu2 - sigma2 theta1 - r) / lambda` before default, 0 after.
    pub fn theta2(&self, t: f64, defaulted: bool) -> f64 {
        if defaulted {
            return 0.0;
        }
        theta2_from_drifts(self.mu2(t), self.sigma2(t), self.theta1(t), self.r(t), self.lambda(t))
    }

    /// Range of `theta2` over grid times with positive intensity.
    pub fn theta2_range(&self, grid: &TimeGrid) -> (f64, f64) {
        (0..grid.steps())
            .map(|i| grid.time(i))
            .filter(|t| self.lambda(*t) > 0.0)
            .map(|t| self.theta2(t, false))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
    }

    /// `theta2 < 1`: the density `zeta` is positive and the martingale measure unique.
    pub fn unique_martingale_measure(&self, grid: &TimeGrid) -> bool {
        self.theta2_range(grid).1 < 1.0
    }

    /// `theta2 <= 1`: the perfect-market driver satisfies the k-increment condition.
    pub fn gamma_condition_holds(&self, grid: &TimeGrid) -> bool {
        self.theta2_range(grid).1 <= 1.0
    }

    fn sampled_bound(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.sample_times().map(|t| f(t).abs()).fold(0.0, f64::max)
    }

    fn theta_coefficients(&self) -> (Coefficient, Coefficient, Coefficient) {
        let m1 = self.clone();
        let m2 = self.clone();
        let theta1 = Coefficient::function(move |t, _| m1.theta1(t), self.sampled_bound(|t| self.theta1(t)));
        let theta2 = Coefficient::function(
            move |t, d| m2.theta2(t, d),
            self.sampled_bound(|t| self.theta2(t, false)),
        );
        let r = match &self.r {
            Coefficient::Constant(v) => Coefficient::Constant(*v),
            other => {
                let r = other.clone();
                Coefficient::function(move |t, _| r.at(t, false), self.sampled_bound(|t| self.r(t)))
            }
        };
        (r, theta1, theta2)
    }

    /// `g = -r y - theta1 z - theta2 lambda k`.
    pub fn perfect_market_driver(&self) -> Result<Driver> {
        let (r, theta1, theta2) = self.theta_coefficients();
        Driver::perfect_market(r, theta1, theta2, self.intensity.lambda_max())
    }

    /// Perfect-market driver plus the feedback `impact(t, y, phi1, phi2) lambda k`.
    pub fn large_investor_driver(
        &self,
        impact: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
        impact_bound: f64,
    ) -> Result<Driver> {
        let (r, theta1, theta2) = self.theta_coefficients();
        let (a, b) = (self.clone(), self.clone());
        let sigma1 = Coefficient::function(move |t, _| a.sigma1(t), self.sampled_bound(|t| self.sigma1(t)));
        let sigma2 = Coefficient::function(move |t, _| b.sigma2(t), self.sampled_bound(|t| self.sigma2(t)));
        large_investor_driver(
            r,
            theta1,
            theta2,
            sigma1,
            sigma2,
            impact,
            impact_bound,
            self.intensity.lambda_max(),
        )
    }

    /// The k-slope `-theta2` of the perfect-market driver.
    pub fn gamma_candidate(&self) -> GammaCandidate {
        let m = self.clone();
        GammaCandidate::supplied(move |t, _, _, _, _, _| -m.theta2(t, false))
    }

    /// One lattice step of `(S0, S1, S2)`: `S0 (1 + r dt)`, the log-Euler step
    /// of `S1` and `S2 (1 + mu2 dt + sigma2 dW + lambda dt)`, with `S2 = 0`
    /// from the default on.
    pub fn lattice_step(&self, grid: &TimeGrid, step: usize, s: [f64; 3], st: &NodeState, c: &Child) -> [f64; 3] {
        let (t, dt) = (grid.time(step), grid.dt(step));
        let s0 = s[0] * (1.0 + self.r(t) * dt);
        let s1 = self.s1_step(t, dt, s[1], c.dw);
        let s2 = if st.defaulted || c.dn > 0.0 {
            0.0
        } else {
            s[2] * (1.0 + self.mu2(t) * dt + self.sigma2(t) * c.dw + st.lambda * dt)
        };
        [s0, s1, s2]
    }

    fn s1_step(&self, t: f64, dt: f64, s1: f64, dw: f64) -> f64 {
        let sig = self.sigma1(t);
        s1 * ((self.mu1(t) - 0.5 * sig * sig) * dt + sig * dw).exp()
    }

    pub fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        if (grid.horizon() - self.horizon).abs() > 1e-12 {
            return Err(BsdeError::Mismatch(format!(
                "scenario horizon {} differs from the market horizon {}",
                grid.horizon(),
                self.horizon
            )));
        }
        Ok(())
    }

    /// Attaches asset prices to a lattice-like scenario through its `with_assets`.
    pub fn asset_step<'a>(
        &'a self,
        grid: &'a TimeGrid,
    ) -> impl Fn(usize, [f64; 3], &NodeState, &Child) -> [f64; 3] + 'a {
        move |step, s, st, c| self.lattice_step(grid, step, s, st, c)
    }
}

/// Simulated `(S0, S1, S2)` at every grid node of every path, path-major.
#[derive(Debug, Clone)]
pub struct AssetPaths {
    steps: usize,
    s0: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl AssetPaths {
    /// Riskless asset at node `i` (identical across paths).
    pub fn s0(&self, i: usize) -> f64 {
        self.s0[i]
    }

    pub fn s1(&self, path: usize, i: usize) -> f64 {
        self.s1[path * (self.steps + 1) + i]
    }

    pub fn s2(&self, path: usize, i: usize) -> f64 {
        self.s2[path * (self.steps + 1) + i]
    }

    /// Terminal `(S0, S1, S2)` per path, as consumed by claims.
    pub fn terminal(&self) -> Vec<[f64; 3]> {
        let n = self.steps;
        let count = self.s1.len() / (n + 1);
        (0..count).map(|p| [self.s0[n], self.s1(p, n), self.s2(p, n)]).collect()
    }
}

/// Log-Euler `S0` and `S1`, multiplicative Euler `S2` that is set to exactly 0
/// on the default step and stays there.
pub fn simulate_assets(set: &ScenarioSet, market: &MarketModel) -> Result<AssetPaths> {
    let grid = set.grid();
    market.check_grid(grid)?;
    let n = grid.steps();
    let mut s0 = Vec::with_capacity(n + 1);
    s0.push(1.0);
    for i in 0..n {
        let last = s0[i];
        s0.push(last * (market.r(grid.time(i)) * grid.dt(i)).exp());
    }
    let coeff: Arc<Vec<(f64, f64, f64, f64)>> = Arc::new(
        (0..n)
            .map(|i| {
                let t = grid.time(i);
                (market.mu1(t), market.sigma1(t), market.mu2(t), market.sigma2(t))
            })
            .collect(),
    );
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..set.len())
        .into_par_iter()
        .map(|p| {
            let path = set.path(p);
            let mut a = Vec::with_capacity(n + 1);
            let mut b = Vec::with_capacity(n + 1);
            a.push(market.s1_0);
            b.push(market.s2_0);
            for i in 0..n {
                let dt = grid.dt(i);
                let (mu1, sig1, mu2, sig2) = coeff[i];
                let dw = path.dw(i);
                a.push(a[i] * ((mu1 - 0.5 * sig1 * sig1) * dt + sig1 * dw).exp());
                let next = if path.defaulted_at(i) || path.dn(i) > 0.0 {
                    0.0
                } else {
                    b[i] * (1.0 + mu2 * dt + sig2 * dw + path.lambda(i) * dt)
                };
                b.push(next);
            }
            (a, b)
        })
        .collect();
    let mut s1 = Vec::with_capacity(set.len() * (n + 1));
    let mut s2 = Vec::with_capacity(set.len() * (n + 1));
    for (a, b) in rows {
        s1.extend(a);
        s2.extend(b);
    }
    Ok(AssetPaths { steps: n, s0, s1, s2 })
}

/// Simulates the assets and attaches their terminal values to the scenario.
pub fn attach_assets(set: ScenarioSet, market: &MarketModel) -> Result<(ScenarioSet, AssetPaths)> {
    let assets = simulate_assets(&set, market)?;
    let set = set.with_terminal_assets(assets.terminal())?;
    Ok((set, assets))
}

/// Amounts `(phi1, phi2)` held in the risky assets at every lattice node of
/// levels `0..m`.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeStrategy {
    pub times: Vec<f64>,
    pub phi1: Vec<Vec<f64>>,
    pub phi2: Vec<Vec<f64>>,
}

impl HedgeStrategy {
    /// Inverse change of variables `Z = phi1 sigma1 + phi2 sigma2`, `K = -phi2`.
    pub fn to_zk(&self, market: &MarketModel) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut z = Vec::with_capacity(self.phi1.len());
        let mut k = Vec::with_capacity(self.phi1.len());
        for (level, (p1, p2)) in self.phi1.iter().zip(&self.phi2).enumerate() {
            let t = self.times[level];
            let (s1, s2) = (market.sigma1(t), market.sigma2(t));
            z.push(p1.iter().zip(p2).map(|(a, b)| a * s1 + b * s2).collect());
            k.push(p2.iter().map(|b| -b).collect());
        }
        (z, k)
    }
}

/// `phi2 = -K`, `phi1 = (Z + sigma2 K) / sigma1`; `phi2 = 0` after default.
pub fn hedge_from_solution<L: Lattice>(lat: &L, sol: &BsdeSolution, market: &MarketModel) -> Result<HedgeStrategy> {
    let m = sol.z.len();
    if sol.k.len() != m || m > lat.grid().steps() {
        return Err(BsdeError::Mismatch("solution carries no (Z, K) on this lattice".into()));
    }
    let mut phi1 = Vec::with_capacity(m);
    let mut phi2 = Vec::with_capacity(m);
    for level in 0..m {
        let t = lat.grid().time(level);
        let (s1, s2) = (market.sigma1(t), market.sigma2(t));
        let mut a = Vec::with_capacity(sol.z[level].len());
        let mut b = Vec::with_capacity(sol.z[level].len());
        for (idx, (z, k)) in sol.z[level].iter().zip(&sol.k[level]).enumerate() {
            let k = if lat.state(level, idx).defaulted { 0.0 } else { *k };
            a.push((z + s2 * k) / s1);
            b.push(-k);
        }
        phi1.push(a);
        phi2.push(b);
    }
    Ok(HedgeStrategy {
        times: sol.times[..m].to_vec(),
        phi1,
        phi2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::simulate_paths;
    use crate::stats::MeanEstimate;

    fn market(lambda: f64) -> MarketModel {
        MarketModel::new(
            0.03,
            0.03,
            0.25,
            0.05,
            0.3,
            IntensityModel::Constant(lambda),
            1.0,
            (1.0, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn premia_round_trip() {
        let m = MarketModel::from_risk_premia(0.02, 0.2, 0.3, 0.4, 0.7, IntensityModel::Constant(0.5), 1.0, (1.0, 1.0))
            .unwrap();
        assert!((m.theta1(0.3) - 0.4).abs() < 1e-14);
        assert!((m.theta2(0.3, false) - 0.7).abs() < 1e-12);
        assert_eq!(m.theta2(0.3, true), 0.0);
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        assert!(m.unique_martingale_measure(&g) && m.gamma_condition_holds(&g));
    }

    #[test]
    fn invalid_markets() {
        assert!(MarketModel::new(0.0, 0.0, 0.0, 0.0, 0.2, IntensityModel::Constant(1.0), 1.0, (1.0, 1.0)).is_err());
        let s = IntensityModel::state_dependent(|_, _| 1.0, 1.0).unwrap();
        assert!(MarketModel::new(0.0, 0.0, 0.2, 0.0, 0.2, s, 1.0, (1.0, 1.0)).is_err());
    }

    #[test]
    fn total_default_and_constant_asset() {
        let g = TimeGrid::uniform(1.0, 20).unwrap();
        let set = simulate_paths(&g, &IntensityModel::Constant(2.0), 300, 5).unwrap();
        let a = simulate_assets(&set, &market(2.0)).unwrap();
        for p in set.paths() {
            if let Some(d) = p.default_step() {
                assert!((d + 1..=20).all(|i| a.s2(p.index(), i) == 0.0));
                assert!(a.s2(p.index(), d) > 0.0);
            }
        }
        let flat = MarketModel::new(
            0.0,
            0.0,
            0.2,
            0.0,
            1e-300,
            IntensityModel::Constant(0.0),
            1.0,
            (1.0, 2.0),
        )
        .unwrap();
        let set = simulate_paths(&g, &IntensityModel::Constant(0.0), 10, 5).unwrap();
        let a = simulate_assets(&set, &flat).unwrap();
        assert!((0..10).all(|p| (0..=20).all(|i| a.s2(p, i) == 2.0)));
    }

    #[test]
    fn discounted_s1_is_a_martingale_when_drift_is_r() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let set = simulate_paths(&g, &IntensityModel::Constant(0.0), 100_000, 11).unwrap();
        let a = simulate_assets(&set, &market(0.0)).unwrap();
        let v: Vec<f64> = (0..set.len()).map(|p| a.s1(p, 10) / a.s0(10)).collect();
        assert!(MeanEstimate::from_samples(&v).within(1.0, 3.0));
    }

    #[test]
    fn hedge_change_of_variables() {
        let m = market(1.0);
        let h = HedgeStrategy {
            times: vec![0.0, 0.5],
            phi1: vec![vec![0.3], vec![1.0, -2.0]],
            phi2: vec![vec![-0.7], vec![0.5, 0.25]],
        };
        let (z, k) = h.to_zk(&m);
        for level in 0..2 {
            for i in 0..z[level].len() {
                let phi2 = -k[level][i];
                let phi1 = (z[level][i] + m.sigma2(0.0) * k[level][i]) / m.sigma1(0.0);
                assert!((phi1 - h.phi1[level][i]).abs() < 1e-14 && (phi2 - h.phi2[level][i]).abs() < 1e-14);
            }
        }
    }
}
