//! Market with a defaultable asset, perfect and nonlinear pricing, hedging
//! and the properties of the nonlinear pricing system.

mod market;
mod price;
mod replicate;
mod suite;

pub use market::{attach_assets, hedge_from_solution, simulate_assets, AssetPaths, HedgeStrategy, MarketModel};
pub use price::{
    perfect_market_price_lattice, perfect_market_price_paths, price_lattice, price_paths, risk_measure, state_prices,
    CurvePoint, PricingReport, ReplicationStats,
};
pub use replicate::{replicate_lattice, replicate_paths};
pub use suite::{property_suite, run_axiom, suite_tree, Axiom, AxiomResult, SuiteConfig};
