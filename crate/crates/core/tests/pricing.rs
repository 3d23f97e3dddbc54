use approx::assert_abs_diff_eq;
use bsde_core::pricing::{
    attach_assets, perfect_market_price_lattice, perfect_market_price_paths, price_lattice, risk_measure, MarketModel,
};
use bsde_core::scenario::{
    build_tree, simulate_paths, Branching, IntensityModel, Lattice, ScenarioTree, TimeGrid, TreeOptions,
};
use bsde_core::solver::{lattice_terminal_values, solve_lattice_with, Asset, TreeSolveOptions};
use bsde_core::{Claim, DividendProcess, Driver};

fn market() -> MarketModel {
    MarketModel::from_risk_premia(
        0.03,
        0.25,
        0.3,
        0.2,
        0.7,
        IntensityModel::Constant(0.9),
        1.0,
        (1.0, 1.0),
    )
    .unwrap()
}

fn tree(m: &MarketModel, n: usize) -> ScenarioTree {
    let g = TimeGrid::uniform(m.horizon(), n).unwrap();
    let step = m.asset_step(&g);
    build_tree(
        &g,
        m.intensity(),
        TreeOptions {
            branching: Branching::Complete,
            ..Default::default()
        },
    )
    .unwrap()
    .with_assets(m.initial_prices(), &step)
    .unwrap()
}

#[test]
fn zero_feedback_large_investor_is_the_perfect_market() {
    let m = market();
    let t = tree(&m, 6);
    let claim = Claim::Put {
        asset: Asset::S1,
        strike: 1.05,
    };
    let div = DividendProcess::none().with_jump(0.4, 0.2);
    let li = m.large_investor_driver(|_, _, _, _| 0.0, 0.0).unwrap();
    let (a, _) = price_lattice(&t, Some(&m), &li, &claim, &div).unwrap();
    let (b, _) = price_lattice(&t, Some(&m), &m.perfect_market_driver().unwrap(), &claim, &div).unwrap();
    assert_abs_diff_eq!(a.price, b.price, epsilon = 1e-12);
}

#[test]
fn perfect_market_price_is_linear() {
    let m = market();
    let t = tree(&m, 6);
    let x1 = Claim::Call {
        asset: Asset::S1,
        strike: 0.9,
    };
    let x2 = Claim::expression("n + max(s2 - 1, 0)").unwrap();
    let (d1, d2) = (
        DividendProcess::none().with_constant_rate(0.1),
        DividendProcess::none().with_jump(0.5, 0.3),
    );
    let p = |c: &Claim, d: &DividendProcess| perfect_market_price_lattice(&t, &m, c, d).unwrap();
    let (a, b) = (x1.clone(), x2.clone());
    let sum = Claim::function(move |s| 2.0 * a.payoff(s).unwrap() + b.payoff(s).unwrap());
    let lhs = p(&sum, &d1.scaled(2.0).plus(&d2));
    assert_abs_diff_eq!(lhs, 2.0 * p(&x1, &d1) + p(&x2, &d2), epsilon = 1e-10);
}

#[test]
fn value_is_constant_after_the_maturity() {
    // extending E_{t,S} past S with the stopped driver and dividends
    let m = market();
    let t = tree(&m, 6);
    let g = t.grid();
    let s = g.time(3);
    let base = Driver::from_expr("-0.03*y - 0.2*abs(z) + 0.5*lambda*k", 1.0).unwrap();
    let claim = Claim::expression("w + n").unwrap();
    let div = DividendProcess::none().with_constant_rate(0.2).with_jump(0.1, 0.3);
    let term = lattice_terminal_values(&t, 3, &claim, &div.stopped_at(s)).unwrap();
    let short = solve_lattice_with(
        &t,
        &base,
        term.clone(),
        &div.stopped_at(s).increments(g)[..3],
        &TreeSolveOptions::default(),
    )
    .unwrap();
    // the level-3 value, propagated unchanged to T with nothing happening after S
    let mut extended = Vec::new();
    for l in 3..=6 {
        let row: Vec<f64> = (0..t.level_len(l)).map(|i| term[t.ancestor(l, i, 3)]).collect();
        extended.push(row);
    }
    let long = solve_lattice_with(
        &t,
        &base.clone().stopped_at(s),
        extended[3].clone(),
        &div.stopped_at(s).increments(g),
        &TreeSolveOptions::default(),
    )
    .unwrap();
    assert_abs_diff_eq!(long.y0(), short.y0(), epsilon = 1e-10);
    for l in 3..=6 {
        for (i, y) in long.y[l].iter().enumerate() {
            assert_abs_diff_eq!(*y, extended[l - 3][i], epsilon = 1e-10);
        }
    }
}

#[test]
fn risk_measure_is_antitone_for_a_monotone_driver() {
    let m = market();
    let t = tree(&m, 5);
    let d = m.perfect_market_driver().unwrap();
    let lo = Claim::expression("max(w, 0)").unwrap();
    let hi = Claim::expression("max(w, 0) + 0.5*n + 0.1").unwrap();
    for s in [0.4, 1.0] {
        assert!(risk_measure(&t, &d, &hi, s).unwrap() <= risk_measure(&t, &d, &lo, s).unwrap());
    }
}

#[test]
fn zero_driver_prices_payoff_plus_dividends() {
    let m = market();
    let t = tree(&m, 5);
    let claim = Claim::expression("2*n - w").unwrap();
    let div = DividendProcess::none().with_constant_rate(0.5).with_jump(0.7, 1.0);
    let (r, _) = price_lattice(&t, None, &Driver::zero(), &claim, &div).unwrap();
    let (e, _) = price_lattice(&t, None, &Driver::zero(), &claim, &DividendProcess::none()).unwrap();
    assert_abs_diff_eq!(r.price - e.price, 1.5, epsilon = 1e-12);
}

#[test]
fn monte_carlo_stock_price_is_fair() {
    let m = market();
    let g = TimeGrid::uniform(1.0, 20).unwrap();
    let (set, _) = attach_assets(simulate_paths(&g, m.intensity(), 40_000, 9).unwrap(), &m).unwrap();
    let r = perfect_market_price_paths(
        &set,
        &m,
        &Claim::Call {
            asset: Asset::S1,
            strike: 0.0,
        },
        &DividendProcess::none(),
    )
    .unwrap();
    assert!((r.price - 1.0).abs() <= 3.0 * r.std_error.unwrap(), "{r:?}");
    // S2 is fair as well: its defaultable dynamics already net the jump
    let r2 = perfect_market_price_paths(
        &set,
        &m,
        &Claim::Call {
            asset: Asset::S2,
            strike: 0.0,
        },
        &DividendProcess::none(),
    )
    .unwrap();
    assert!((r2.price - 1.0).abs() <= 4.0 * r2.std_error.unwrap() + 2e-2, "{r2:?}");
}
