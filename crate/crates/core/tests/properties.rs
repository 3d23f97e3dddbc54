use bsde_core::pricing::{hedge_from_solution, price_lattice, MarketModel};
use bsde_core::scenario::{build_tree, Branching, IntensityModel, Lattice, ScenarioTree, TimeGrid, TreeOptions};
use bsde_core::solver::{
    comparison_check, lattice_terminal_values, linear_representation_lattice, solve_tree, ComparisonProblem,
    GammaCandidate, Verdict,
};
use bsde_core::{Claim, DividendProcess, Driver};
use proptest::prelude::*;

fn tree(n: usize, lambda: f64, branching: Branching) -> ScenarioTree {
    let g = TimeGrid::uniform(1.0, n).unwrap();
    build_tree(
        &g,
        &IntensityModel::Constant(lambda),
        TreeOptions {
            branching,
            ..Default::default()
        },
    )
    .unwrap()
}

fn claim(a: f64, b: f64, c: f64) -> Claim {
    Claim::function(move |s| a + b * s.w.max(-0.5) + c * s.n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn level_probabilities_sum_to_one(n in 1usize..7, lambda in 0.0f64..3.0) {
        let t = tree(n, lambda, Branching::Product);
        for l in 0..=n {
            let total: f64 = (0..t.level_len(l)).map(|i| t.state(l, i).probability).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn representation_matches_backward_induction(
        phi in -1.0f64..1.0, delta in -1.0f64..1.0, beta in -1.0f64..1.0, gamma in -1.0f64..1.0,
        a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, rate in 0.0f64..0.5,
    ) {
        let t = tree(6, 1.0, Branching::Product);
        let d = Driver::lambda_linear(phi, delta, beta, gamma, 1.0).unwrap();
        let xi = claim(a, b, c);
        let div = DividendProcess::none().with_constant_rate(rate);
        let s = solve_tree(&t, &d, &xi, &div).unwrap();
        let term = lattice_terminal_values(&t, 6, &xi, &div).unwrap();
        let r = linear_representation_lattice(&t, &d, &term, &div.increments(t.grid())).unwrap();
        prop_assert!(s.max_y_difference(&r) < 1e-10);
    }

    #[test]
    fn post_default_k_vanishes(gamma in -1.0f64..1.0, c in -1.0f64..1.0) {
        let t = tree(5, 1.0, Branching::Product);
        let d = Driver::lambda_linear(0.0, 0.1, 0.2, gamma, 1.0).unwrap();
        let s = solve_tree(&t, &d, &claim(0.0, 1.0, c), &DividendProcess::none()).unwrap();
        for l in 0..5 {
            for i in 0..t.level_len(l) {
                if t.state(l, i).defaulted {
                    prop_assert_eq!(s.k[l][i], 0.0);
                }
            }
        }
    }

    #[test]
    fn ordered_inputs_give_ordered_values(
        beta in -0.8f64..0.8, gamma in -1.0f64..1.0, bump in 0.0f64..1.0, shift in 0.0f64..0.5, jump in 0.0f64..0.5,
    ) {
        let t = tree(6, 1.0, Branching::Complete);
        let g2 = Driver::lambda_linear(0.0, -0.2, beta, gamma, 1.0).unwrap();
        let g1 = Driver::lambda_linear(shift, -0.2, beta, gamma, 1.0).unwrap();
        let p1 = ComparisonProblem {
            driver: g1,
            claim: claim(bump, 1.0, bump),
            dividends: DividendProcess::none().with_jump(0.5, jump),
        };
        let p2 = ComparisonProblem { driver: g2, claim: claim(0.0, 1.0, 0.0), dividends: DividendProcess::none() };
        let r = comparison_check(&t, &p1, &p2, &GammaCandidate::DifferenceQuotient).unwrap();
        prop_assert_eq!(r.verdict, Verdict::Pass);
        prop_assert!(r.min_gap >= -1e-10);
    }

    #[test]
    fn hedge_recovers_z_and_k(theta1 in -0.5f64..0.5, theta2 in -0.5f64..1.0, sigma2 in 0.05f64..0.5) {
        let m = MarketModel::from_risk_premia(0.02, 0.2, sigma2, theta1, theta2, IntensityModel::Constant(1.0), 1.0, (1.0, 1.0))
            .unwrap();
        let g = TimeGrid::uniform(1.0, 5).unwrap();
        let step = m.asset_step(&g);
        let t = build_tree(&g, m.intensity(), TreeOptions::default()).unwrap().with_assets(m.initial_prices(), &step).unwrap();
        let claim = Claim::expression("max(s1 - 1, 0) + 0.5*s2").unwrap();
        let (_, sol) = price_lattice(&t, Some(&m), &m.perfect_market_driver().unwrap(), &claim, &DividendProcess::none()).unwrap();
        let h = hedge_from_solution(&t, &sol, &m).unwrap();
        let (z, k) = h.to_zk(&m);
        for l in 0..5 {
            for i in 0..t.level_len(l) {
                prop_assert!((z[l][i] - sol.z[l][i]).abs() < 1e-12);
                prop_assert!((k[l][i] - sol.k[l][i]).abs() < 1e-12);
            }
        }
    }
}
