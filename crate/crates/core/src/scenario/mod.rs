//! Time grids and the stochastic environment `(W, N, lambda, M)`: Monte Carlo
//! path sets, the exact non-recombining scenario tree and a recombining
//! lattice for Markov problems.

mod grid;
mod intensity;
mod lattice;
mod paths;
mod tree;

use std::ops::{Deref, Range};

pub use grid::TimeGrid;
pub use intensity::IntensityModel;
pub use lattice::RecombiningTree;
pub use paths::{compensator_residual, path_rng, simulate_paths, ScenarioPath, ScenarioSet};
pub use tree::{build_tree, Branching, ScenarioTree, TreeOptions, DEFAULT_TREE_CAP, PROBABILITY_CLIP};

use crate::error::{BsdeError, Result};

/// State of a lattice node as seen by drivers and solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeState {
    pub t: f64,
    /// Brownian level `W_t`.
    pub w: f64,
    /// `N_t = 1`.
    pub defaulted: bool,
    /// Intensity used on the step leaving this node (0 after default).
    pub lambda: f64,
    /// Unconditional probability of reaching the node.
    pub probability: f64,
}

/// One-step transition to a child node.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Child {
    pub index: usize,
    /// Conditional transition probability.
    pub prob: f64,
    pub dw: f64,
    pub dn: f64,
}

/// Up to four children of a node.
#[derive(Debug, Clone, Copy)]
pub struct Children {
    items: [Child; 4],
    len: usize,
}

impl Children {
    pub(crate) fn new() -> Self {
        Self {
            items: [Child::default(); 4],
            len: 0,
        }
    }

    pub(crate) fn push(&mut self, c: Child) {
        self.items[self.len] = c;
        self.len += 1;
    }
}

impl Deref for Children {
    type Target = [Child];
    fn deref(&self) -> &[Child] {
        &self.items[..self.len]
    }
}

/// Terminal state a claim is written on. Asset prices are NaN when no market
/// has been attached to the scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalState {
    pub t: f64,
    pub w: f64,
    pub n: f64,
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
}

/// Asset-state transition used to attach `(S0, S1, S2)` to a lattice:
/// `(step, parent values, parent state, child) -> child values`.
pub type AssetStep<'a> = dyn Fn(usize, [f64; 3], &NodeState, &Child) -> [f64; 3] + 'a;

/// A finite filtration on which conditional expectations are exact sums.
pub trait Lattice: Sync {
    fn grid(&self) -> &TimeGrid;
    fn level_len(&self, level: usize) -> usize;
    fn state(&self, level: usize, idx: usize) -> NodeState;
    fn children(&self, level: usize, idx: usize) -> Children;
    fn assets(&self, level: usize, idx: usize) -> Option<[f64; 3]>;

    fn terminal_state(&self, level: usize, idx: usize) -> TerminalState {
        let s = self.state(level, idx);
        let [s0, s1, s2] = self.assets(level, idx).unwrap_or([f64::NAN; 3]);
        TerminalState {
            t: s.t,
            w: s.w,
            n: if s.defaulted { 1.0 } else { 0.0 },
            s0,
            s1,
            s2,
        }
    }

    /// Index range at `target >= level` containing every descendant of the node.
    fn descendants(&self, level: usize, idx: usize, target: usize) -> Range<usize> {
        let _ = (level, idx);
        0..self.level_len(target)
    }

    /// Total probability mass at `level`.
    fn level_mass(&self, level: usize) -> f64 {
        (0..self.level_len(level))
            .map(|i| self.state(level, i).probability)
            .sum()
    }
}

/// Forward propagation of asset values shared by both lattice types. On a
/// recombining lattice every parent of a node must produce the same value.
pub(crate) fn propagate_assets<L: Lattice>(
    lat: &L,
    initial: [f64; 3],
    step: &AssetStep<'_>,
) -> Result<Vec<Vec<[f64; 3]>>> {
    let n = lat.grid().steps();
    let mut out = vec![vec![initial]];
    for level in 0..n {
        let mut next: Vec<Option<[f64; 3]>> = vec![None; lat.level_len(level + 1)];
        for idx in 0..lat.level_len(level) {
            let st = lat.state(level, idx);
            for c in lat.children(level, idx).iter() {
                let v = step(level, out[level][idx], &st, c);
                match next[c.index] {
                    None => next[c.index] = Some(v),
                    Some(prev) => {
                        let same = prev
                            .iter()
                            .zip(v)
                            .all(|(a, b)| (a - b).abs() <= 1e-10 * (1.0 + a.abs().max(b.abs())));
                        if !same {
                            return Err(BsdeError::Mismatch(format!(
                                "asset values do not recombine at level {}",
                                level + 1
                            )));
                        }
                    }
                }
            }
        }
        out.push(next.into_iter().map(|v| v.unwrap_or([f64::NAN; 3])).collect());
    }
    Ok(out)
}
