//! Backward solvers for `-dY = g(t, Y, Z, K) dt + dD - Z dW - K dM` and the
//! theorem-level checks built on them.

mod claim;
mod comparison;
mod dividends;
mod estimates;
mod lsmc;
mod picard;
mod representation;
mod tree;

use std::io::{self, Write};

pub use claim::{path_terminal_state, Asset, Claim, CLAIM_VARIABLES};
pub use comparison::{
    comparison_check, strict_comparison_check, ComparisonProblem, ComparisonReport, GammaCandidate, HypothesisCheck,
    StrictComparisonReport, StrictVerdict, Verdict,
};
pub use dividends::DividendProcess;
pub use estimates::{apriori_check, default_estimate_parameters, EstimateCertificate, ESTIMATE_SLACK};
pub use lsmc::{solve_lsmc, LsmcOptions, LsmcSolution, Scheme};
pub use picard::{picard_diagnostic, PicardReport};
pub use representation::{linear_representation_lattice, linear_representation_paths};
pub use tree::{
    lattice_terminal_values, one_step_estimates, solve_lattice, solve_lattice_nodewise, solve_lattice_with, solve_tree,
    TreeSolveOptions,
};

/// Backend that produced a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Tree,
    Lsmc,
    Representation,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Tree => "tree",
            Method::Lsmc => "lsmc",
            Method::Representation => "representation",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// Picard iterations used, maximum over the nodes of each level.
    pub picard_iterations: Vec<usize>,
    /// Regression R^2 of the conditional mean per step (LSMC).
    pub regression_r2: Vec<f64>,
    /// `max |Y_n - xi|` over terminal nodes.
    pub terminal_residual: f64,
    pub warnings: Vec<String>,
}

/// `(Y, Z, K)` on every node of a lattice, levels `0..=m`. `Z` and `K` are
/// stored for levels `0..m`.
#[derive(Debug, Clone, PartialEq)]
pub struct BsdeSolution {
    pub method: Method,
    pub times: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

impl BsdeSolution {
    pub fn y0(&self) -> f64 {
        self.y[0][0]
    }

    /// Terminal level `m`.
    pub fn levels(&self) -> usize {
        self.y.len() - 1
    }

    /// Largest node-wise `|Y - other.Y|`.
    pub fn max_y_difference(&self, other: &BsdeSolution) -> f64 {
        self.y
            .iter()
            .zip(&other.y)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// Writes `node_or_path,step,t,Y,Z,K`; terminal rows carry empty `Z, K`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "node_or_path,step,t,Y,Z,K")?;
        for (level, ys) in self.y.iter().enumerate() {
            for (idx, y) in ys.iter().enumerate() {
                if level < self.z.len() {
                    writeln!(
                        out,
                        "{idx},{level},{},{y},{},{}",
                        self.times[level], self.z[level][idx], self.k[level][idx]
                    )?;
                } else {
                    writeln!(out, "{idx},{level},{},{y},,", self.times[level])?;
                }
            }
        }
        Ok(())
    }
}
