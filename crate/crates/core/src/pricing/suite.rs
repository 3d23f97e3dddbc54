use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::market::{HedgeStrategy, MarketModel};
use super::replicate::replicate_lattice;
use crate::drivers::{Driver, DriverContext};
use crate::error::Result;
use crate::scenario::{build_tree, path_rng, Branching, Lattice, ScenarioTree, TimeGrid, TreeOptions};
use crate::solver::{
    comparison_check, lattice_terminal_values, solve_lattice_nodewise, strict_comparison_check, Claim,
    ComparisonProblem, DividendProcess, GammaCandidate, StrictVerdict, TreeSolveOptions, Verdict,
};

/// Node-wise tolerance of every equality and inequality in the suite.
const TOL: f64 = 1e-10;
/// Sampled states per structural hypothesis check.
const HYPOTHESIS_SAMPLES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axiom {
    Consistency,
    ZeroOne,
    Monotonicity,
    Convexity,
    Nonnegativity,
    NoArbitrage,
    WealthMartingale,
}

impl Axiom {
    pub const ALL: [Axiom; 7] = [
        Axiom::Consistency,
        Axiom::ZeroOne,
        Axiom::Monotonicity,
        Axiom::Convexity,
        Axiom::Nonnegativity,
        Axiom::NoArbitrage,
        Axiom::WealthMartingale,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Axiom::Consistency => "consistency",
            Axiom::ZeroOne => "zero_one_law",
            Axiom::Monotonicity => "monotonicity",
            Axiom::Convexity => "convexity",
            Axiom::Nonnegativity => "nonnegativity",
            Axiom::NoArbitrage => "no_arbitrage",
            Axiom::WealthMartingale => "wealth_martingale",
        }
    }

    fn salt(&self) -> u64 {
        0x9e37_79b9_7f4a_7c15u64.wrapping_mul(*self as u64 + 1)
    }
}

impl fmt::Display for Axiom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    pub instances: usize,
    pub seed: u64,
    /// Steps of the scenario tree on `[0, T]`.
    pub steps: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            seed: 1,
            steps: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxiomResult {
    pub axiom: Axiom,
    pub verdict: Verdict,
    pub total: usize,
    pub passed: usize,
    /// Instances where the conclusion of the axiom failed.
    pub violations: usize,
    /// One line per hypothesis that failed verification.
    pub failed_hypotheses: Vec<String>,
    pub detail: String,
}

/// Tree used by the suite: three children per node, so every one-step
/// martingale is a combination of `dW` and `dN - m`.
pub fn suite_tree(market: &MarketModel, steps: usize) -> Result<ScenarioTree> {
    let grid = TimeGrid::uniform(market.horizon(), steps)?;
    let opts = TreeOptions {
        branching: Branching::Complete,
        ..Default::default()
    };
    let step = market.asset_step(&grid);
    let tree = build_tree(&grid, market.intensity(), opts)?.with_assets(market.initial_prices(), &step)?;
    Ok(tree)
}

fn contexts(tree: &ScenarioTree) -> Vec<DriverContext> {
    let n = tree.grid().steps();
    let mut out = Vec::new();
    for level in 0..n {
        for idx in 0..tree.level_len(level) {
            let s = tree.state(level, idx);
            let c = DriverContext {
                t: s.t,
                lambda: s.lambda,
                defaulted: s.defaulted,
            };
            if !out.contains(&c) {
                out.push(c);
            }
        }
    }
    out
}

/// `g(t, 0, 0, 0)` extremes over the node contexts.
fn zero_value_range(driver: &Driver, ctxs: &[DriverContext]) -> (f64, f64) {
    ctxs.iter()
        .map(|c| driver.value(c, 0.0, 0.0, 0.0))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
}

/// Candidate check on sampled states: inequality slack and smallest `gamma`.
fn gamma_sampled(
    driver: &Driver,
    candidate: &GammaCandidate,
    ctxs: &[DriverContext],
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let pre: Vec<&DriverContext> = ctxs.iter().filter(|c| !c.defaulted && c.lambda > 0.0).collect();
    let mut slack = f64::INFINITY;
    let mut min_gamma = f64::INFINITY;
    if pre.is_empty() {
        return (slack, min_gamma);
    }
    for _ in 0..HYPOTHESIS_SAMPLES {
        let c = pre[rng.random_range(0..pre.len())];
        let (y, z) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let (k1, k2): (f64, f64) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let dk = k1 - k2;
        if dk.abs() < 1e-9 {
            continue;
        }
        let lhs = driver.value(c, y, z, k1) - driver.value(c, y, z, k2);
        let gamma = match candidate {
            GammaCandidate::DifferenceQuotient => lhs / (dk * c.lambda),
            GammaCandidate::Supplied(f) => f(c.t, c.lambda, y, z, k1, k2),
        };
        min_gamma = min_gamma.min(gamma);
        slack = slack.min((lhs - gamma * dk * c.lambda) / (1.0 + lhs.abs()));
    }
    (slack, min_gamma)
}

/// Midpoint-type convexity of `g` in `(y, z, k)` on sampled states.
fn convexity_sampled(driver: &Driver, ctxs: &[DriverContext], rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = f64::INFINITY;
    for _ in 0..HYPOTHESIS_SAMPLES {
        let c = &ctxs[rng.random_range(0..ctxs.len())];
        let a: [f64; 3] = [
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        ];
        let b: [f64; 3] = [
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        ];
        let al: f64 = rng.random_range(0.0..1.0);
        let m: Vec<f64> = (0..3).map(|i| al * a[i] + (1.0 - al) * b[i]).collect();
        let gap = al * driver.value(c, a[0], a[1], a[2]) + (1.0 - al) * driver.value(c, b[0], b[1], b[2])
            - driver.value(c, m[0], m[1], m[2]);
        worst = worst.min(gap);
    }
    worst
}

/// `a + b max(w - c, 0) + d max(s1 - K, 0) + e n + f s2`; nonnegative when `positive`.
fn random_claim(rng: &mut ChaCha8Rng, positive: bool) -> Claim {
    let mut coef = |lo: f64| rng.random_range(lo..1.0);
    let lo = if positive { 0.0 } else { -1.0 };
    let (a, b, e) = (coef(lo), coef(lo), coef(lo));
    let (d, f) = (coef(0.0), coef(0.0));
    let c = rng.random_range(-1.0..1.0);
    let strike = rng.random_range(0.8..1.2);
    Claim::function(move |s| a + b * (s.w - c).max(0.0) + d * (s.s1 - strike).max(0.0) + e * s.n + f * s.s2)
}

/// Non-decreasing dividends: a constant rate and a jump at a random time.
fn random_dividends(rng: &mut ChaCha8Rng, horizon: f64) -> DividendProcess {
    let rate = rng.random_range(0.0..0.3);
    let size = rng.random_range(0.0..0.5);
    let time = rng.random_range(0.05..1.0) * horizon;
    DividendProcess::none().with_constant_rate(rate).with_jump(time, size)
}

fn sum_claims(a: Claim, b: Claim, wa: f64, wb: f64) -> Claim {
    Claim::function(move |s| wa * a.payoff(s).unwrap_or(f64::NAN) + wb * b.payoff(s).unwrap_or(f64::NAN))
}

/// `(xi1, D1) > (xi2, D2)`; with `sparse` the payoff bump lives on a strict
/// subset of the leaves.
fn ordered_pair(
    rng: &mut ChaCha8Rng,
    horizon: f64,
    sparse: bool,
) -> ((Claim, DividendProcess), (Claim, DividendProcess)) {
    let xi2 = random_claim(rng, false);
    let d2 = random_dividends(rng, horizon);
    let u = rng.random_range(0.0..1.0);
    let v = rng.random_range(-0.5..1.0);
    let bump = if sparse {
        Claim::function(move |s| u * (s.w - v).max(0.0) * s.n)
    } else {
        let base = random_claim(rng, true);
        Claim::function(move |s| u * base.payoff(s).unwrap_or(f64::NAN))
    };
    let extra = if sparse && rng.random_bool(0.5) {
        DividendProcess::none()
    } else {
        random_dividends(rng, horizon)
    };
    let xi1 = sum_claims(xi2.clone(), bump, 1.0, 1.0);
    ((xi1, d2.plus(&extra)), (xi2, d2))
}

fn solve_full(
    tree: &ScenarioTree,
    driver: &Driver,
    claim: &Claim,
    div: &DividendProcess,
) -> Result<crate::solver::BsdeSolution> {
    crate::solver::solve_lattice(tree, driver, claim, div)
}

fn max_gap(a: &[Vec<f64>], b: &[Vec<f64>], levels: usize) -> f64 {
    (0..=levels)
        .flat_map(|l| a[l].iter().zip(&b[l]).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

struct Tally {
    passed: usize,
    violations: usize,
    total: usize,
}

impl Tally {
    fn new() -> Self {
        Self {
            passed: 0,
            violations: 0,
            total: 0,
        }
    }

    fn record(&mut self, ok: bool) {
        self.total += 1;
        if ok {
            self.passed += 1;
        } else {
            self.violations += 1;
        }
    }
}

fn result(axiom: Axiom, tally: Tally, failed: Vec<String>, detail: String) -> AxiomResult {
    let verdict = if !failed.is_empty() {
        Verdict::Inconclusive
    } else if tally.violations == 0 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    AxiomResult {
        axiom,
        verdict,
        total: tally.total,
        passed: tally.passed,
        violations: tally.violations,
        failed_hypotheses: failed,
        detail,
    }
}

/// Runs every axiom of the nonlinear pricing system on seeded random tree
/// instances with driver `driver` and k-slope candidate `candidate`.
pub fn property_suite(
    market: &MarketModel,
    driver: &Driver,
    candidate: &GammaCandidate,
    config: &SuiteConfig,
) -> Result<Vec<AxiomResult>> {
    let tree = suite_tree(market, config.steps)?;
    Axiom::ALL
        .iter()
        .map(|a| run_axiom(*a, &tree, market, driver, candidate, config))
        .collect()
}

/// Runs one axiom on its own seeded instance stream.
pub fn run_axiom(
    axiom: Axiom,
    tree: &ScenarioTree,
    market: &MarketModel,
    driver: &Driver,
    candidate: &GammaCandidate,
    config: &SuiteConfig,
) -> Result<AxiomResult> {
    let n = tree.grid().steps();
    let horizon = tree.grid().horizon();
    let ctxs = contexts(tree);
    let mut hyp_rng = path_rng(config.seed ^ axiom.salt(), usize::MAX >> 1);
    let mut failed = Vec::new();
    let needs_gamma = matches!(
        axiom,
        Axiom::Monotonicity | Axiom::Convexity | Axiom::Nonnegativity | Axiom::NoArbitrage
    );
    if needs_gamma {
        let (slack, min_gamma) = gamma_sampled(driver, candidate, &ctxs, &mut hyp_rng);
        if slack < -1e-12 {
            failed.push(format!(
                "k-increment inequality fails for the candidate (slack {slack:e})"
            ));
        }
        let strict = axiom == Axiom::NoArbitrage;
        if (strict && min_gamma <= -1.0 + 1e-12) || (!strict && min_gamma < -1.0 - 1e-12) {
            let bound = if strict { "gamma > -1" } else { "gamma >= -1" };
            failed.push(format!("{bound} violated: min gamma = {min_gamma}"));
        }
    }
    let (g0_min, g0_max) = zero_value_range(driver, &ctxs);
    match axiom {
        Axiom::ZeroOne if g0_min.abs().max(g0_max.abs()) > 1e-14 => {
            failed.push(format!("g(t, 0, 0, 0) = 0 violated: range [{g0_min}, {g0_max}]"))
        }
        Axiom::Nonnegativity if g0_min < -1e-14 => failed.push(format!("g(t, 0, 0, 0) >= 0 violated: min {g0_min}")),
        Axiom::Convexity => {
            let gap = convexity_sampled(driver, &ctxs, &mut hyp_rng);
            if gap < -1e-10 {
                failed.push(format!("driver is not convex on sampled states (gap {gap:e})"));
            }
        }
        _ => {}
    }

    let mut tally = Tally::new();
    let mut worst = match axiom {
        Axiom::Monotonicity | Axiom::Convexity | Axiom::Nonnegativity => f64::INFINITY,
        _ => 0.0f64,
    };
    let mut triggered = 0;
    let mut extra = String::new();
    for i in 0..config.instances {
        let mut rng = path_rng(config.seed ^ axiom.salt(), i);
        match axiom {
            Axiom::Consistency => {
                let claim = random_claim(&mut rng, false);
                let div = random_dividends(&mut rng, horizon);
                let full = solve_full(tree, driver, &claim, &div)?;
                let m = rng.random_range(1..n);
                // even instances stop at t_m, odd ones at the first of default and t_m
                let hitting = i % 2 == 1;
                let inc = div.increments(tree.grid());
                let stopped = solve_lattice_nodewise(
                    tree,
                    driver,
                    m,
                    full.y[m].clone(),
                    |l, _| inc[l],
                    |l, idx| (hitting && tree.state(l, idx).defaulted).then(|| full.y[l][idx]),
                    &TreeSolveOptions::default(),
                )?;
                let gap = max_gap(&full.y, &stopped.y, m);
                worst = worst.max(gap);
                tally.record(gap <= TOL);
            }
            Axiom::ZeroOne => {
                let claim = random_claim(&mut rng, false);
                let div = random_dividends(&mut rng, horizon);
                let m = rng.random_range(0..n);
                let a: Vec<bool> = (0..tree.level_len(m)).map(|_| rng.random_bool(0.5)).collect();
                let inside = |l: usize, idx: usize| l >= m && a[tree.ancestor(l, idx, m)];
                let full = solve_full(tree, driver, &claim, &div)?;
                let xi = lattice_terminal_values(tree, n, &claim, &div)?;
                let masked: Vec<f64> = xi
                    .iter()
                    .enumerate()
                    .map(|(j, v)| if inside(n, j) { *v } else { 0.0 })
                    .collect();
                let inc = div.increments(tree.grid());
                let sol = solve_lattice_nodewise(
                    tree,
                    driver,
                    n,
                    masked,
                    |l, idx| if inside(l, idx) { inc[l] } else { 0.0 },
                    |_, _| None,
                    &TreeSolveOptions::default(),
                )?;
                let mut gap = 0.0f64;
                for l in m..=n {
                    for idx in 0..tree.level_len(l) {
                        let want = if inside(l, idx) { full.y[l][idx] } else { 0.0 };
                        gap = gap.max((sol.y[l][idx] - want).abs());
                    }
                }
                worst = worst.max(gap);
                tally.record(gap <= TOL);
            }
            Axiom::Monotonicity => {
                // every third instance bumps the payoff on default only, the
                // direction in which a k-slope below -1 reverses the order
                let ((xi1, d1), (xi2, d2)) = if i % 3 == 2 {
                    let c = random_claim(&mut rng, false);
                    let d = random_dividends(&mut rng, horizon);
                    let u = rng.random_range(0.1..1.0);
                    (
                        (sum_claims(c.clone(), Claim::function(|s| s.n), 1.0, u), d.clone()),
                        (c, d),
                    )
                } else {
                    ordered_pair(&mut rng, horizon, false)
                };
                let p1 = ComparisonProblem {
                    driver: driver.clone(),
                    claim: xi1,
                    dividends: d1,
                };
                let p2 = ComparisonProblem {
                    driver: driver.clone(),
                    claim: xi2,
                    dividends: d2,
                };
                let r = comparison_check(tree, &p1, &p2, candidate)?;
                worst = worst.min(r.min_gap);
                if !r.hypotheses_hold() {
                    for h in r.hypotheses.iter().filter(|h| !h.holds) {
                        let line = format!("{}: {}", h.name, h.detail);
                        if !failed.iter().any(|f: &String| f.starts_with(h.name)) {
                            failed.push(line);
                        }
                    }
                }
                tally.record(r.ordering_holds);
            }
            Axiom::Convexity => {
                let (xi1, xi2) = (random_claim(&mut rng, false), random_claim(&mut rng, false));
                let (d1, d2) = (random_dividends(&mut rng, horizon), random_dividends(&mut rng, horizon));
                let al = rng.random_range(0.0..1.0);
                let mix = solve_full(
                    tree,
                    driver,
                    &sum_claims(xi1.clone(), xi2.clone(), al, 1.0 - al),
                    &d1.scaled(al).plus(&d2.scaled(1.0 - al)),
                )?;
                let s1 = solve_full(tree, driver, &xi1, &d1)?;
                let s2 = solve_full(tree, driver, &xi2, &d2)?;
                let mut gap = f64::INFINITY;
                for l in 0..=n {
                    for idx in 0..tree.level_len(l) {
                        gap = gap.min(al * s1.y[l][idx] + (1.0 - al) * s2.y[l][idx] - mix.y[l][idx]);
                    }
                }
                worst = worst.min(gap);
                tally.record(gap >= -TOL);
            }
            Axiom::Nonnegativity => {
                let claim = random_claim(&mut rng, true);
                let div = random_dividends(&mut rng, horizon);
                let s = solve_full(tree, driver, &claim, &div)?;
                let low = s.y.iter().flatten().copied().fold(f64::INFINITY, f64::min);
                worst = worst.min(low);
                tally.record(low >= -TOL);
            }
            Axiom::NoArbitrage => {
                let ((xi1, d1), (xi2, d2)) = if i % 4 == 0 {
                    let c = random_claim(&mut rng, false);
                    let d = random_dividends(&mut rng, horizon);
                    ((c.clone(), d.clone()), (c, d))
                } else {
                    ordered_pair(&mut rng, horizon, true)
                };
                let p1 = ComparisonProblem {
                    driver: driver.clone(),
                    claim: xi1,
                    dividends: d1,
                };
                let p2 = ComparisonProblem {
                    driver: driver.clone(),
                    claim: xi2,
                    dividends: d2,
                };
                let r = strict_comparison_check(tree, &p1, &p2, candidate)?;
                if r.trigger.is_some() {
                    triggered += 1;
                }
                tally.record(r.verdict != StrictVerdict::Violated);
            }
            Axiom::WealthMartingale => {
                let div = random_dividends(&mut rng, horizon);
                let x0 = rng.random_range(-1.0..2.0);
                let phi1: Vec<Vec<f64>> = (0..n)
                    .map(|l| (0..tree.level_len(l)).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect();
                let phi2: Vec<Vec<f64>> = (0..n)
                    .map(|l| {
                        (0..tree.level_len(l))
                            .map(|idx| {
                                if tree.state(l, idx).defaulted {
                                    0.0
                                } else {
                                    rng.random_range(-1.0..1.0)
                                }
                            })
                            .collect()
                    })
                    .collect();
                let strategy = HedgeStrategy {
                    times: (0..n).map(|l| tree.grid().time(l)).collect(),
                    phi1,
                    phi2,
                };
                let (_, v) = replicate_lattice(tree, market, driver, &strategy, x0, &div, &Claim::Constant(0.0))?;
                let tau = rng.random_range(1..=n);
                let inc = div.increments(tree.grid());
                let sol = solve_lattice_nodewise(
                    tree,
                    driver,
                    tau,
                    v[tau].clone(),
                    |l, _| inc[l],
                    |_, _| None,
                    &TreeSolveOptions::default(),
                )?;
                let gap = max_gap(&sol.y, &v, tau);
                worst = worst.max(gap);
                tally.record(gap <= TOL);
            }
        }
    }
    let detail = match axiom {
        Axiom::Consistency | Axiom::ZeroOne | Axiom::WealthMartingale => format!("max node gap {worst:e}"),
        Axiom::Monotonicity => format!("min Y1 - Y2 = {worst:e}"),
        Axiom::Convexity => format!("min convexity gap {worst:e}"),
        Axiom::Nonnegativity => format!("min Y = {worst:e}"),
        Axiom::NoArbitrage => {
            extra.push_str(&format!("{triggered} instances triggered equality"));
            extra.clone()
        }
    };
    Ok(result(axiom, tally, failed, detail))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::IntensityModel;

    fn market(theta2: f64) -> MarketModel {
        MarketModel::from_risk_premia(
            0.03,
            0.2,
            0.3,
            0.25,
            theta2,
            IntensityModel::Constant(1.0),
            1.0,
            (1.0, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn perfect_market_passes() {
        let m = market(0.6);
        let cfg = SuiteConfig {
            instances: 12,
            seed: 3,
            steps: 5,
        };
        let res = property_suite(&m, &m.perfect_market_driver().unwrap(), &m.gamma_candidate(), &cfg).unwrap();
        for r in &res {
            assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
        }
    }

    #[test]
    fn forced_theta2_above_one_is_flagged() {
        let m = market(1.5);
        let cfg = SuiteConfig {
            instances: 20,
            seed: 5,
            steps: 5,
        };
        let tree = suite_tree(&m, cfg.steps).unwrap();
        let r = run_axiom(
            Axiom::Monotonicity,
            &tree,
            &m,
            &m.perfect_market_driver().unwrap(),
            &m.gamma_candidate(),
            &cfg,
        )
        .unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
        assert!(r.failed_hypotheses.iter().any(|h| h.contains("gamma >= -1")));
        assert!(r.violations > 0, "{r:?}");
    }
}
