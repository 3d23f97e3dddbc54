//! Numerical engine for backward stochastic differential equations driven by
//! a Brownian motion and a compensated default martingale.

pub mod adjoint;
pub mod drivers;
pub mod error;
pub mod expr;
pub mod pricing;
pub mod scenario;
pub mod solver;
pub mod stats;

pub use drivers::{Driver, DriverContext};
pub use error::{BsdeError, Result};
pub use solver::{BsdeSolution, Claim, DividendProcess};
pub use stats::MeanEstimate;
