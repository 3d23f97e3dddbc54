use std::fmt;
use std::sync::Arc;

use super::claim::Claim;
use super::dividends::DividendProcess;
use super::tree::{lattice_terminal_values, solve_lattice_with, TreeSolveOptions};
use super::BsdeSolution;
use crate::drivers::{Driver, DriverContext};
use crate::error::Result;
use crate::scenario::Lattice;

/// Tolerance of ordering and equality verdicts.
const ORDER_TOL: f64 = 1e-10;
/// Tolerance of hypothesis checks.
const HYP_TOL: f64 = 1e-12;

/// One BSDE with generalized driver `g dt + dD` and terminal condition `xi`.
#[derive(Debug, Clone)]
pub struct ComparisonProblem {
    pub driver: Driver,
    pub claim: Claim,
    pub dividends: DividendProcess,
}

type GammaFn = Arc<dyn Fn(f64, f64, f64, f64, f64, f64) -> f64 + Send + Sync>;

/// Slope process `gamma` of the k-increment condition
/// `g1(t, y, z, k1) - g1(t, y, z, k2) >= gamma (k1 - k2) lambda`.
#[derive(Clone, Default)]
pub enum GammaCandidate {
    /// `[g1(k1) - g1(k2)] / ((k1 - k2) lambda)`; makes the inequality an identity.
    #[default]
    DifferenceQuotient,
    /// `gamma(t, lambda, y, z, k1, k2)`.
    Supplied(GammaFn),
}

impl fmt::Debug for GammaCandidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaCandidate::DifferenceQuotient => write!(f, "DifferenceQuotient"),
            GammaCandidate::Supplied(_) => write!(f, "Supplied"),
        }
    }
}

impl GammaCandidate {
    pub fn supplied(f: impl Fn(f64, f64, f64, f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        GammaCandidate::Supplied(Arc::new(f))
    }

    pub fn constant(gamma: f64) -> Self {
        Self::supplied(move |_, _, _, _, _, _| gamma)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub holds: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// A hypothesis failed verification; the conclusion is not implied.
    Inconclusive,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Inconclusive => "INCONCLUSIVE",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub verdict: Verdict,
    /// `Y1 >= Y2 - 1e-10` at every node.
    pub ordering_holds: bool,
    /// `min (Y1 - Y2)` over all nodes and where it is attained.
    pub min_gap: f64,
    pub worst_node: (usize, usize),
    /// Smallest candidate `gamma` met along the solutions (+inf if none).
    pub min_gamma: f64,
    pub hypotheses: Vec<HypothesisCheck>,
    pub first: BsdeSolution,
    pub second: BsdeSolution,
}

impl ComparisonReport {
    pub fn hypotheses_hold(&self) -> bool {
        self.hypotheses.iter().all(|h| h.holds)
    }
}

fn solve<L: Lattice>(lat: &L, p: &ComparisonProblem) -> Result<(BsdeSolution, Vec<f64>)> {
    let grid = lat.grid();
    p.dividends.validate(grid.horizon())?;
    let n = grid.steps();
    let term = lattice_terminal_values(lat, n, &p.claim, &p.dividends)?;
    let sol = solve_lattice_with(
        lat,
        &p.driver,
        term.clone(),
        &p.dividends.increments(grid),
        &TreeSolveOptions::default(),
    )?;
    Ok((sol, term))
}

fn ctx_of<L: Lattice>(lat: &L, level: usize, idx: usize) -> DriverContext {
    let st = lat.state(level, idx);
    DriverContext {
        t: st.t,
        lambda: st.lambda,
        defaulted: st.defaulted,
    }
}

struct Trace {
    checks: Vec<HypothesisCheck>,
    min_gamma: f64,
}

/// Verifies the comparison hypotheses along `(Y2, Z2, K1, K2)`; `strict`
/// requires `gamma > -1`.
fn hypotheses<L: Lattice>(
    lat: &L,
    p1: &ComparisonProblem,
    p2: &ComparisonProblem,
    s1: &BsdeSolution,
    s2: &BsdeSolution,
    xi: (&[f64], &[f64]),
    candidate: &GammaCandidate,
    strict: bool,
) -> Trace {
    let grid = lat.grid();
    let n = grid.steps();
    let mut checks = Vec::new();

    let worst_xi = xi.0.iter().zip(xi.1).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min);
    checks.push(HypothesisCheck {
        name: "terminal ordering xi1 >= xi2",
        holds: worst_xi >= -HYP_TOL,
        detail: format!("min(xi1 - xi2) = {worst_xi:e}"),
    });

    let mut worst_g = f64::INFINITY;
    let mut min_gamma = f64::INFINITY;
    let mut worst_slack = f64::INFINITY;
    let mut max_gamma_sqrt_lambda: f64 = 0.0;
    for level in 0..n {
        for idx in 0..lat.level_len(level) {
            let ctx = ctx_of(lat, level, idx);
            let (y2, z2, k2) = (s2.y[level][idx], s2.z[level][idx], s2.k[level][idx]);
            let g1 = p1.driver.value(&ctx, y2, z2, k2);
            worst_g = worst_g.min(g1 - p2.driver.value(&ctx, y2, z2, k2));
            if ctx.lambda == 0.0 {
                continue;
            }
            let k1 = s1.k[level][idx];
            let dk = k1 - k2;
            let lhs = p1.driver.value(&ctx, y2, z2, k1) - g1;
            let gamma = match candidate {
                GammaCandidate::DifferenceQuotient => {
                    if dk.abs() <= 1e-14 {
                        continue;
                    }
                    lhs / (dk * ctx.lambda)
                }
                GammaCandidate::Supplied(f) => f(ctx.t, ctx.lambda, y2, z2, k1, k2),
            };
            min_gamma = min_gamma.min(gamma);
            max_gamma_sqrt_lambda = max_gamma_sqrt_lambda.max(gamma.abs() * ctx.lambda.sqrt());
            worst_slack = worst_slack.min(lhs - gamma * dk * ctx.lambda);
        }
    }
    checks.push(HypothesisCheck {
        name: "driver ordering g1 >= g2 along (Y2, Z2, K2)",
        holds: worst_g >= -HYP_TOL,
        detail: format!("min(g1 - g2) = {worst_g:e}"),
    });
    checks.push(HypothesisCheck {
        name: "k-increment inequality with candidate gamma",
        holds: worst_slack >= -HYP_TOL,
        detail: format!("min slack = {worst_slack:e}"),
    });
    let (bound_name, gamma_ok) = if strict {
        ("gamma > -1", min_gamma > -1.0 + HYP_TOL)
    } else {
        ("gamma >= -1", min_gamma >= -1.0 - HYP_TOL)
    };
    checks.push(HypothesisCheck {
        name: bound_name,
        holds: gamma_ok,
        detail: if min_gamma.is_finite() {
            format!("min gamma = {min_gamma}, max |gamma| sqrt(lambda) = {max_gamma_sqrt_lambda}")
        } else {
            "no node with a nonzero k-increment".into()
        },
    });
    let dbar = p1.dividends.minus(&p2.dividends);
    checks.push(HypothesisCheck {
        name: "D1 - D2 non-decreasing",
        holds: dbar.is_nondecreasing(grid, HYP_TOL),
        detail: format!("D1_T - D2_T = {}", dbar.total(grid)),
    });
    Trace { checks, min_gamma }
}

/// Solves both problems on the lattice and tests `Y1 >= Y2` at every node.
pub fn comparison_check<L: Lattice>(
    lat: &L,
    first: &ComparisonProblem,
    second: &ComparisonProblem,
    candidate: &GammaCandidate,
) -> Result<ComparisonReport> {
    let (s1, xi1) = solve(lat, first)?;
    let (s2, xi2) = solve(lat, second)?;
    let trace = hypotheses(lat, first, second, &s1, &s2, (&xi1, &xi2), candidate, false);
    let mut min_gap = f64::INFINITY;
    let mut worst_node = (0, 0);
    for (level, (a, b)) in s1.y.iter().zip(&s2.y).enumerate() {
        for (idx, (x, y)) in a.iter().zip(b).enumerate() {
            if x - y < min_gap {
                min_gap = x - y;
                worst_node = (level, idx);
            }
        }
    }
    let ordering_holds = min_gap >= -ORDER_TOL;
    let verdict = if !trace.checks.iter().all(|h| h.holds) {
        Verdict::Inconclusive
    } else if ordering_holds {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(ComparisonReport {
        verdict,
        ordering_holds,
        min_gap,
        worst_node,
        min_gamma: trace.min_gamma,
        hypotheses: trace.checks,
        first: s1,
        second: s2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrictVerdict {
    /// Equality at a node and every equality on its sub-lattice confirmed.
    Confirmed,
    /// Equality at a node but some payoff, driver or dividend differs below it.
    Violated,
    /// No node with `Y1 = Y2`.
    NotTriggered,
}

impl StrictVerdict {
    pub fn label(&self) -> &'static str {
        match self {
            StrictVerdict::Confirmed => "CONFIRMED",
            StrictVerdict::Violated => "FAIL",
            StrictVerdict::NotTriggered => "NOT-TRIGGERED",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StrictComparisonReport {
    pub verdict: StrictVerdict,
    /// First node before maturity (in level order) with `|Y1 - Y2| <= 1e-10`.
    pub trigger: Option<(usize, usize)>,
    pub terminal_equal: bool,
    pub driver_equal: bool,
    pub dividends_constant: bool,
    pub min_gamma: f64,
    pub hypotheses: Vec<HypothesisCheck>,
}

impl StrictComparisonReport {
    pub fn hypotheses_hold(&self) -> bool {
        self.hypotheses.iter().all(|h| h.holds)
    }
}

/// Nodes reachable from `(level, idx)`, as a mask per level.
fn reachable<L: Lattice>(lat: &L, level: usize, idx: usize) -> Vec<Vec<bool>> {
    let n = lat.grid().steps();
    let mut masks = vec![Vec::new(); n + 1];
    let mut cur = vec![false; lat.level_len(level)];
    cur[idx] = true;
    for l in level..n {
        let mut next = vec![false; lat.level_len(l + 1)];
        for (i, on) in cur.iter().enumerate() {
            if *on {
                for c in lat.children(l, i).iter() {
                    if c.prob > 0.0 {
                        next[c.index] = true;
                    }
                }
            }
        }
        masks[l] = std::mem::replace(&mut cur, next);
    }
    masks[n] = cur;
    masks
}

/// Strict comparison: where `Y1 = Y2` at a node, checks `xi1 = xi2`,
/// `g1 = g2` along `(Y2, Z2, K2)` and constant `D1 - D2` below that node.
pub fn strict_comparison_check<L: Lattice>(
    lat: &L,
    first: &ComparisonProblem,
    second: &ComparisonProblem,
    candidate: &GammaCandidate,
) -> Result<StrictComparisonReport> {
    let (s1, xi1) = solve(lat, first)?;
    let (s2, xi2) = solve(lat, second)?;
    let trace = hypotheses(lat, first, second, &s1, &s2, (&xi1, &xi2), candidate, true);
    let grid = lat.grid();
    let n = grid.steps();
    let mut trigger = None;
    'outer: for level in 0..n {
        for idx in 0..lat.level_len(level) {
            if (s1.y[level][idx] - s2.y[level][idx]).abs() <= ORDER_TOL {
                trigger = Some((level, idx));
                break 'outer;
            }
        }
    }
    let Some((level, idx)) = trigger else {
        return Ok(StrictComparisonReport {
            verdict: StrictVerdict::NotTriggered,
            trigger,
            terminal_equal: false,
            driver_equal: false,
            dividends_constant: false,
            min_gamma: trace.min_gamma,
            hypotheses: trace.checks,
        });
    };
    let masks = reachable(lat, level, idx);
    let terminal_equal = (0..lat.level_len(n)).all(|i| !masks[n][i] || (xi1[i] - xi2[i]).abs() <= ORDER_TOL);
    let mut driver_equal = true;
    for l in level..n {
        for i in 0..lat.level_len(l) {
            if !masks[l][i] {
                continue;
            }
            let ctx = ctx_of(lat, l, i);
            let (y2, z2, k2) = (s2.y[l][i], s2.z[l][i], s2.k[l][i]);
            if (first.driver.value(&ctx, y2, z2, k2) - second.driver.value(&ctx, y2, z2, k2)).abs() > ORDER_TOL {
                driver_equal = false;
            }
        }
    }
    let dbar = first.dividends.minus(&second.dividends);
    let inc = dbar.increments(grid);
    let dividends_constant =
        inc[level..].iter().all(|d| d.abs() <= ORDER_TOL) && dbar.terminal_jump(grid.horizon()).abs() <= ORDER_TOL;
    let verdict = if terminal_equal && driver_equal && dividends_constant {
        StrictVerdict::Confirmed
    } else {
        StrictVerdict::Violated
    };
    Ok(StrictComparisonReport {
        verdict,
        trigger,
        terminal_equal,
        driver_equal,
        dividends_constant,
        min_gamma: trace.min_gamma,
        hypotheses: trace.checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_tree, IntensityModel, ScenarioTree, TimeGrid, TreeOptions};

    fn tree() -> ScenarioTree {
        build_tree(
            &TimeGrid::uniform(1.0, 6).unwrap(),
            &IntensityModel::Constant(1.0),
            TreeOptions::default(),
        )
        .unwrap()
    }

    fn problem(driver: Driver, claim: Claim) -> ComparisonProblem {
        ComparisonProblem {
            driver,
            claim,
            dividends: DividendProcess::none(),
        }
    }

    #[test]
    fn identical_problems() {
        let t = tree();
        let p = problem(
            Driver::lambda_linear(0.1, -0.2, 0.3, 0.4, 1.0).unwrap(),
            Claim::expression("w").unwrap(),
        );
        let r = comparison_check(&t, &p, &p, &GammaCandidate::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.min_gap, 0.0);
        let s = strict_comparison_check(&t, &p, &p, &GammaCandidate::default()).unwrap();
        assert_eq!(s.verdict, StrictVerdict::Confirmed);
        assert_eq!(s.trigger, Some((0, 0)));
    }

    #[test]
    fn shifted_terminal_is_strictly_larger() {
        let t = tree();
        let d = Driver::lambda_linear(0.0, -0.1, 0.2, 0.0, 1.0).unwrap();
        let p1 = problem(d.clone(), Claim::expression("w + 1").unwrap());
        let p2 = problem(d, Claim::expression("w").unwrap());
        let c = GammaCandidate::constant(0.0);
        let r = comparison_check(&t, &p1, &p2, &c).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert!(r.min_gap > 0.0);
        let s = strict_comparison_check(&t, &p1, &p2, &c).unwrap();
        assert_eq!(s.verdict, StrictVerdict::NotTriggered);
    }

    #[test]
    fn counterexample_is_flagged() {
        let t = tree();
        let bad = problem(
            Driver::lambda_linear(0.0, 0.0, 0.0, -2.0, 1.0).unwrap(),
            Claim::DefaultIndicator,
        );
        let zero = problem(Driver::zero(), Claim::Constant(0.0));
        let r = comparison_check(&t, &bad, &zero, &GammaCandidate::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
        assert!(!r.ordering_holds);
        assert!(r.first.y0() < 0.0);
        assert!((r.min_gamma + 2.0).abs() < 1e-9);
        assert!(r.hypotheses.iter().any(|h| h.name == "gamma >= -1" && !h.holds));
    }

    #[test]
    fn strict_boundary_case() {
        let t = tree();
        let d = Driver::lambda_linear(0.0, 0.0, 0.0, -1.0, 1.0).unwrap();
        let p1 = problem(d.clone(), Claim::DefaultIndicator);
        let p2 = problem(d, Claim::Constant(0.0));
        let s = strict_comparison_check(&t, &p1, &p2, &GammaCandidate::default()).unwrap();
        assert_eq!(s.trigger, Some((0, 0)));
        assert_eq!(s.verdict, StrictVerdict::Violated);
        assert!(!s.terminal_equal);
        assert!((s.min_gamma + 1.0).abs() < 1e-9);
        assert!(!s.hypotheses_hold());
    }
}
