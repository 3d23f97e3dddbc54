//! Subcommand bodies. Each returns a report; the caller writes it.

use std::fmt;

use bsde_core::pricing::{
    attach_assets, hedge_from_solution, perfect_market_price_lattice, perfect_market_price_paths, price_lattice,
    price_paths, property_suite, replicate_lattice, replicate_paths, MarketModel, PricingReport, SuiteConfig,
};
use bsde_core::scenario::{
    build_tree, compensator_residual, simulate_paths, Branching, IntensityModel, RecombiningTree, ScenarioSet,
    TimeGrid, TreeOptions,
};
use bsde_core::solver::{
    comparison_check, lattice_terminal_values, linear_representation_lattice, linear_representation_paths,
    solve_lattice, solve_lsmc, ComparisonProblem, GammaCandidate, Verdict,
};
use bsde_core::{BsdeError, BsdeSolution, Claim, DividendProcess, Driver};

use crate::config::{FieldError, LatticeKind, MethodName, RunConfig};
use crate::report::Report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Subcommand {
    Simulate,
    Solve,
    Price,
    Hedge,
    Verify,
    Counterexample,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::Solve => "solve",
            Subcommand::Price => "price",
            Subcommand::Hedge => "hedge",
            Subcommand::Verify => "verify",
            Subcommand::Counterexample => "counterexample",
        }
    }
}

#[derive(Debug)]
pub enum RunError {
    /// Invalid configuration, attributed to a field.
    Config(FieldError),
    /// Engine failure while running; `numerical` separates breakdowns from
    /// inputs the engine rejected.
    Engine { field: String, error: BsdeError },
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 2,
            RunError::Engine { error, .. } if error.is_numerical() => 4,
            RunError::Engine { .. } => 2,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Engine { field, error } => write!(f, "{field}: {error}"),
        }
    }
}

impl From<FieldError> for RunError {
    fn from(e: FieldError) -> Self {
        RunError::Config(e)
    }
}

type RunResult<T> = Result<T, RunError>;

fn engine<T>(field: &str, r: bsde_core::Result<T>) -> RunResult<T> {
    r.map_err(|error| RunError::Engine {
        field: field.to_string(),
        error,
    })
}

/// A report plus whether a property suite recorded a FAIL verdict.
pub struct Outcome {
    pub report: Report,
    pub suite_failed: bool,
}

pub struct Context<'a> {
    pub config: &'a RunConfig,
    pub config_hash: &'a str,
    pub seed_flag: Option<u64>,
}

pub fn run(cmd: Subcommand, ctx: &Context<'_>) -> RunResult<Outcome> {
    let why = format!("by '{}'", cmd.name());
    match cmd {
        Subcommand::Simulate => simulate(ctx, &why),
        Subcommand::Solve => solve(ctx, &why),
        Subcommand::Price => price(ctx, &why),
        Subcommand::Hedge => hedge(ctx, &why),
        Subcommand::Verify => verify(ctx, &why),
        Subcommand::Counterexample => counterexample(ctx, &why),
    }
    .map(|report| Outcome {
        suite_failed: report.value("suite_verdict") == Some("FAIL"),
        report,
    })
}

enum AnyLattice {
    Tree(bsde_core::scenario::ScenarioTree),
    Recombining(RecombiningTree),
}

/// Applies a generic lattice computation to whichever lattice was built.
macro_rules! on_lattice {
    ($lat:expr, |$l:ident| $body:expr) => {
        match $lat {
            AnyLattice::Tree($l) => $body,
            AnyLattice::Recombining($l) => $body,
        }
    };
}

fn build_lattice(
    kind: LatticeKind,
    grid: &TimeGrid,
    intensity: &IntensityModel,
    market: Option<&MarketModel>,
) -> RunResult<AnyLattice> {
    let lat = match kind {
        LatticeKind::Recombining => AnyLattice::Recombining(engine("lattice", RecombiningTree::new(grid, intensity))?),
        LatticeKind::Product | LatticeKind::Complete => {
            let branching = if kind == LatticeKind::Complete {
                Branching::Complete
            } else {
                Branching::Product
            };
            let opts = TreeOptions {
                branching,
                ..Default::default()
            };
            AnyLattice::Tree(engine("lattice", build_tree(grid, intensity, opts))?)
        }
    };
    let Some(m) = market else {
        return Ok(lat);
    };
    let step = m.asset_step(grid);
    Ok(match lat {
        AnyLattice::Tree(t) => AnyLattice::Tree(engine("market", t.with_assets(m.initial_prices(), &step))?),
        AnyLattice::Recombining(t) => {
            AnyLattice::Recombining(engine("market", t.with_assets(m.initial_prices(), &step))?)
        }
    })
}

fn lattice_warnings(lat: &AnyLattice) -> Vec<String> {
    match lat {
        AnyLattice::Tree(t) => t.warnings().to_vec(),
        AnyLattice::Recombining(t) => t.warnings().to_vec(),
    }
}

fn csv_of(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory");
    buf
}

fn scenario_set(
    ctx: &Context<'_>,
    grid: &TimeGrid,
    intensity: &IntensityModel,
    why: &str,
) -> RunResult<(ScenarioSet, u64)> {
    let seed = ctx
        .config
        .require_seed(ctx.seed_flag, &format!("{why} for a Monte Carlo method"))?;
    let paths = ctx.config.paths(why)?;
    Ok((engine("paths", simulate_paths(grid, intensity, paths, seed))?, seed))
}

fn header(ctx: &Context<'_>, cmd: &str, seed: Option<u64>) -> RunResult<Report> {
    let seed = match seed {
        Some(s) => Some(s),
        None => ctx.config.seed(ctx.seed_flag)?,
    };
    Ok(Report::new(cmd, ctx.config_hash, seed))
}

fn push_warnings(r: &mut Report, warnings: &[String]) {
    r.kv("warnings", warnings.len());
    for w in warnings {
        r.line(format!("warning: {w}"));
    }
}

fn simulate(ctx: &Context<'_>, why: &str) -> RunResult<Report> {
    let cfg = ctx.config;
    let grid = cfg.grid(why)?;
    let intensity = cfg.intensity(why)?;
    let (set, seed) = scenario_set(ctx, &grid, &intensity, why)?;
    let set = match cfg.market.as_ref() {
        Some(_) => engine("market", attach_assets(set, &cfg.market(why)?))?.0,
        None => set,
    };
    let mut r = header(ctx, "simulate", Some(seed))?;
    r.both("paths", set.len());
    r.both("steps", grid.steps());
    r.both("horizon", grid.horizon());
    let defaults = set.paths().filter(|p| p.default_step().is_some()).count();
    r.both("default_fraction", defaults as f64 / set.len() as f64);
    let res = compensator_residual(&set);
    r.both("compensator_residual_mean", res.mean);
    r.both("compensator_residual_se", res.std_error);
    r.csv("paths.csv", csv_of(|b| set.write_csv(b, None)));
    Ok(r)
}

fn needs_market(cfg: &RunConfig, claim: &Claim, why: &str) -> RunResult<Option<MarketModel>> {
    if cfg.market.is_some() {
        return Ok(Some(cfg.market(why)?));
    }
    if claim.needs_assets() {
        return Err(FieldError::new("market", "missing block (the claim is written on asset prices)").into());
    }
    Ok(None)
}

fn solve(ctx: &Context<'_>, why: &str) -> RunResult<Report> {
    let cfg = ctx.config;
    let grid = cfg.grid(why)?;
    let intensity = cfg.intensity(why)?;
    let claim = cfg.claim(why)?;
    let market = needs_market(cfg, &claim, why)?;
    let driver = cfg.driver(market.as_ref(), why)?;
    let div = cfg.dividends()?;
    let mut r;
    match cfg.method {
        MethodName::Lsmc => {
            let (set, seed) = scenario_set(ctx, &grid, &intensity, why)?;
            let set = attach_if(set, market.as_ref())?;
            let sol = engine("method", solve_lsmc(&set, &driver, &claim, &div, &cfg.lsmc_options()?))?;
            r = header(ctx, "solve", Some(seed))?;
            r.both("method", "lsmc");
            r.both("y0", sol.y0);
            r.both("std_error", sol.std_error);
            r.both("z0", sol.z0);
            r.both("k0", sol.k0);
            push_warnings(&mut r, &sol.diagnostics.warnings);
            r.csv("solution.csv", csv_of(|b| sol.paths.write_csv(b)));
            r.csv(
                "curve.csv",
                csv_of(|b| {
                    use std::io::Write;
                    writeln!(b, "t,mean_Y")?;
                    for (i, y) in sol.mean_curve.iter().enumerate() {
                        writeln!(b, "{},{y}", grid.time(i))?;
                    }
                    Ok(())
                }),
            );
        }
        MethodName::Representation if cfg.paths.is_some() => {
            let (set, seed) = scenario_set(ctx, &grid, &intensity, why)?;
            let set = attach_if(set, market.as_ref())?;
            let est = engine("driver", linear_representation_paths(&set, &driver, &claim, &div))?;
            r = header(ctx, "solve", Some(seed))?;
            r.both("method", "representation");
            r.both("y0", est.mean);
            r.both("std_error", est.std_error);
        }
        method => {
            let lat = build_lattice(cfg.lattice, &grid, &intensity, market.as_ref())?;
            let sol: BsdeSolution = match method {
                MethodName::Representation => on_lattice!(&lat, |l| {
                    let n = grid.steps();
                    let term = engine("claim", lattice_terminal_values(l, n, &claim, &div))?;
                    engine(
                        "driver",
                        linear_representation_lattice(l, &driver, &term, &div.increments(&grid)),
                    )?
                }),
                _ => on_lattice!(&lat, |l| engine("method", solve_lattice(l, &driver, &claim, &div))?),
            };
            r = header(ctx, "solve", None)?;
            r.both("method", method.name());
            r.both("y0", sol.y0());
            if let (Some(z), Some(k)) = (sol.z.first(), sol.k.first()) {
                r.both("z0", z[0]);
                r.both("k0", k[0]);
            }
            let mut w = lattice_warnings(&lat);
            w.extend(sol.diagnostics.warnings.iter().cloned());
            push_warnings(&mut r, &w);
            r.csv("solution.csv", csv_of(|b| sol.write_csv(b)));
        }
    }
    r.kv("driver_lambda_constant", driver.lambda_constant());
    Ok(r)
}

fn attach_if(set: ScenarioSet, market: Option<&MarketModel>) -> RunResult<ScenarioSet> {
    match market {
        Some(m) => Ok(engine("market", attach_assets(set, m))?.0),
        None => Ok(set),
    }
}

fn market_flags(r: &mut Report, m: &MarketModel, grid: &TimeGrid) {
    let (lo, hi) = m.theta2_range(grid);
    r.both("theta2_min", lo);
    r.both("theta2_max", hi);
    r.both("unique_martingale_measure", m.unique_martingale_measure(grid));
    r.both("gamma_condition_holds", m.gamma_condition_holds(grid));
}

fn pricing_rows(r: &mut Report, p: &PricingReport) {
    r.both("price", p.price);
    if let Some(se) = p.std_error {
        r.both("std_error", se);
    }
    push_warnings(r, &p.warnings);
    r.csv("price.csv", csv_of(|b| p.write_csv(b)));
}

fn price(ctx: &Context<'_>, why: &str) -> RunResult<Report> {
    let cfg = ctx.config;
    let grid = cfg.grid(why)?;
    let intensity = cfg.intensity(why)?;
    let market = cfg.market(why)?;
    let driver = cfg.driver(Some(&market), why)?;
    let claim = cfg.claim(why)?;
    let div = cfg.dividends()?;
    let pm = cfg.is_perfect_market();
    let mut r;
    match cfg.method {
        MethodName::Lsmc => {
            let (set, seed) = scenario_set(ctx, &grid, &intensity, why)?;
            let set = attach_if(set, Some(&market))?;
            let p = engine(
                "method",
                price_paths(&set, Some(&market), &driver, &claim, &div, &cfg.lsmc_options()?),
            )?;
            r = header(ctx, "price", Some(seed))?;
            r.both("method", "lsmc");
            pricing_rows(&mut r, &p);
            if pm {
                let q = engine("market", perfect_market_price_paths(&set, &market, &claim, &div))?;
                r.both("perfect_market_price", q.price);
                r.both("perfect_market_std_error", q.std_error.unwrap_or(f64::NAN));
            }
        }
        MethodName::Representation => {
            if !pm {
                return Err(FieldError::new("method", "representation pricing needs the perfect-market driver").into());
            }
            if cfg.paths.is_some() {
                let (set, seed) = scenario_set(ctx, &grid, &intensity, why)?;
                let set = attach_if(set, Some(&market))?;
                let p = engine("market", perfect_market_price_paths(&set, &market, &claim, &div))?;
                r = header(ctx, "price", Some(seed))?;
                r.both("method", "representation");
                pricing_rows(&mut r, &p);
            } else {
                let lat = build_lattice(cfg.lattice, &grid, &intensity, Some(&market))?;
                let v = on_lattice!(&lat, |l| engine(
                    "market",
                    perfect_market_price_lattice(l, &market, &claim, &div)
                )?);
                r = header(ctx, "price", None)?;
                r.both("method", "representation");
                r.both("price", v);
            }
        }
        MethodName::Tree => {
            let lat = build_lattice(cfg.lattice, &grid, &intensity, Some(&market))?;
            let (p, _) = on_lattice!(&lat, |l| engine(
                "method",
                price_lattice(l, Some(&market), &driver, &claim, &div)
            )?);
            r = header(ctx, "price", None)?;
            r.both("method", "tree");
            pricing_rows(&mut r, &p);
            if pm {
                let v = on_lattice!(&lat, |l| engine(
                    "market",
                    perfect_market_price_lattice(l, &market, &claim, &div)
                )?);
                r.both("perfect_market_price", v);
                r.both("perfect_market_difference", (v - p.price).abs());
            }
        }
    }
    market_flags(&mut r, &market, &grid);
    Ok(r)
}

fn hedge(ctx: &Context<'_>, why: &str) -> RunResult<Report> {
    let cfg = ctx.config;
    let grid = cfg.grid(why)?;
    let intensity = cfg.intensity(why)?;
    let market = cfg.market(why)?;
    let driver = cfg.driver(Some(&market), why)?;
    let claim = cfg.claim(why)?;
    let div = cfg.dividends()?;
    if cfg.method != MethodName::Tree {
        return Err(FieldError::new("method", "hedges are extracted from the tree method").into());
    }
    let lat = build_lattice(cfg.lattice, &grid, &intensity, Some(&market))?;
    let mut r = header(ctx, "hedge", None)?;
    let (p, strategy, tree_stats) = on_lattice!(&lat, |l| {
        let (p, sol) = engine("method", price_lattice(l, Some(&market), &driver, &claim, &div))?;
        let h = engine("market", hedge_from_solution(l, &sol, &market))?;
        let (s, _) = engine(
            "method",
            replicate_lattice(l, &market, &driver, &h, p.price, &div, &claim),
        )?;
        (p, h, s)
    });
    r.both("method", "tree");
    pricing_rows(&mut r, &p);
    r.both("phi1_0", strategy.phi1[0][0]);
    r.both("phi2_0", strategy.phi2[0][0]);
    r.both("tree_replication_mean", tree_stats.mean);
    r.both("tree_replication_l2", tree_stats.l2);
    r.both("tree_replication_max_abs", tree_stats.max_abs);
    r.csv(
        "hedge.csv",
        csv_of(|b| {
            use std::io::Write;
            writeln!(b, "step,node,t,phi1,phi2")?;
            for (i, (a, c)) in strategy.phi1.iter().zip(&strategy.phi2).enumerate() {
                for (j, (x, y)) in a.iter().zip(c).enumerate() {
                    writeln!(b, "{i},{j},{},{x},{y}", strategy.times[i])?;
                }
            }
            Ok(())
        }),
    );
    if cfg.paths.is_some() {
        let AnyLattice::Recombining(rec) = &lat else {
            return Err(FieldError::new("lattice", "out-of-sample replication needs the recombining lattice").into());
        };
        let (set, seed) = scenario_set(ctx, &grid, &intensity, why)?;
        let set = attach_if(set, Some(&market))?;
        let s = engine(
            "method",
            replicate_paths(&set, rec, &market, &driver, &strategy, p.price, &div, &claim),
        )?;
        r.both("mc_seed", seed);
        r.both("mc_paths", s.samples);
        r.both("mc_replication_mean", s.mean);
        r.both("mc_replication_l2", s.l2);
        r.both("mc_replication_max_abs", s.max_abs);
        r.both("mc_replication_relative_l2", s.relative_l2);
    }
    Ok(r)
}

fn verify(ctx: &Context<'_>, why: &str) -> RunResult<Report> {
    let cfg = ctx.config;
    let market = cfg.market(why)?;
    let driver = cfg.driver(Some(&market), why)?;
    let seed = cfg.require_seed(ctx.seed_flag, &format!("{why} for the seeded instance generator"))?;
    let block = cfg.suite.clone();
    let (instances, steps, fixed) = block
        .as_ref()
        .map_or((100, 8, None), |b| (b.instances, b.steps, b.gamma_candidate));
    if instances == 0 {
        return Err(FieldError::new("suite.instances", "must be >= 1").into());
    }
    let candidate = match fixed {
        Some(g) => GammaCandidate::constant(g),
        None if cfg.is_perfect_market() => market.gamma_candidate(),
        None => GammaCandidate::DifferenceQuotient,
    };
    let suite = SuiteConfig { instances, seed, steps };
    let results = engine("suite", property_suite(&market, &driver, &candidate, &suite))?;
    let mut r = header(ctx, "verify", Some(seed))?;
    r.both("instances", instances);
    r.both("tree_steps", steps);
    let mut any_fail = false;
    for a in &results {
        any_fail |= a.verdict == Verdict::Fail;
        r.line(format!(
            "{}: {} ({}/{} pass, {} violations) {}",
            a.axiom,
            a.verdict.label(),
            a.passed,
            a.total,
            a.violations,
            a.detail
        ));
        for h in &a.failed_hypotheses {
            r.line(format!("  hypothesis not verified: {h}"));
        }
        r.kv(&format!("{}_verdict", a.axiom), a.verdict.label());
        r.kv(&format!("{}_passed", a.axiom), a.passed);
        r.kv(&format!("{}_violations", a.axiom), a.violations);
    }
    let grid = engine("suite", TimeGrid::uniform(market.horizon(), steps))?;
    market_flags(&mut r, &market, &grid);
    r.both("suite_verdict", if any_fail { "FAIL" } else { "PASS" });
    r.csv(
        "suite.csv",
        csv_of(|b| {
            use std::io::Write;
            writeln!(b, "axiom,verdict,passed,total,violations")?;
            for a in &results {
                writeln!(
                    b,
                    "{},{},{},{},{}",
                    a.axiom,
                    a.verdict.label(),
                    a.passed,
                    a.total,
                    a.violations
                )?;
            }
            Ok(())
        }),
    );
    Ok(r)
}

fn counterexample(ctx: &Context<'_>, why: &str) -> RunResult<Report> {
    let cfg = ctx.config;
    let grid = cfg.grid(why)?;
    let intensity = cfg.intensity(why)?;
    let (driver, gamma) = match &cfg.driver {
        Some(_) => (cfg.driver(None, why)?, cfg.constant_gamma()),
        None => (
            engine(
                "driver",
                Driver::lambda_linear(0.0, 0.0, 0.0, -2.0, intensity.lambda_max()),
            )?,
            Some(-2.0),
        ),
    };
    let claim = match cfg.claim {
        Some(_) => cfg.claim(why)?,
        None => Claim::DefaultIndicator,
    };
    if claim.needs_assets() {
        return Err(FieldError::new("claim", "the counterexample takes claims on (W, N) only").into());
    }
    let none = DividendProcess::none();
    let lat = engine("lattice", RecombiningTree::new(&grid, &intensity))?;
    let first = ComparisonProblem {
        driver: driver.clone(),
        claim: claim.clone(),
        dividends: none.clone(),
    };
    let second = ComparisonProblem {
        driver: driver.clone(),
        claim: Claim::Constant(0.0),
        dividends: none.clone(),
    };
    let cmp = engine(
        "driver",
        comparison_check(&lat, &first, &second, &GammaCandidate::DifferenceQuotient),
    )?;
    let expected = engine("claim", solve_lattice(&lat, &Driver::zero(), &claim, &none))?.y0();
    let mut r = header(ctx, "counterexample", None)?;
    let y0 = cmp.first.y0();
    r.both("lattice", "recombining");
    r.both("steps", grid.steps());
    r.both("y0_tree", y0);
    r.both("expected_payoff", expected);
    let closed = match (&intensity, gamma, &claim) {
        (IntensityModel::Constant(l), Some(g), Claim::DefaultIndicator) => {
            Some(1.0 - (-(1.0 + g) * l * grid.horizon()).exp())
        }
        _ => None,
    };
    if let Some(c) = closed {
        r.both("closed_form", c);
        r.both("tree_error", (y0 - c).abs());
    }
    if cfg.paths.is_some() {
        let (set, seed) = scenario_set(ctx, &grid, &intensity, why)?;
        let sol = engine("method", solve_lsmc(&set, &driver, &claim, &none, &cfg.lsmc_options()?))?;
        r.both("lsmc_seed", seed);
        r.both("lsmc_y0", sol.y0);
        r.both("lsmc_std_error", sol.std_error);
    }
    r.both("min_gamma", cmp.min_gamma);
    r.both("comparison_verdict", cmp.verdict.label());
    for h in &cmp.hypotheses {
        r.line(format!(
            "hypothesis {}: {} ({})",
            h.name,
            if h.holds { "holds" } else { "violated" },
            h.detail
        ));
    }
    let verdict = if cmp.min_gamma < -1.0 {
        "comparison hypotheses violated: γ < -1".to_string()
    } else if cmp.ordering_holds {
        "comparison holds".to_string()
    } else {
        "comparison fails".to_string()
    };
    r.both("verdict", &verdict);
    if y0 < 0.0 && expected > 0.0 {
        r.line("the nonnegative payoff N_T has a negative value Y_0");
    } else if y0.abs() <= 1e-10 && expected > 0.0 {
        r.line("strict comparison fails: Y_0 = 0 although N_T > 0 with positive probability");
    }
    Ok(r)
}
