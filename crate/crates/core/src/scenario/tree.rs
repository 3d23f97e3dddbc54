use std::ops::Range;

use super::grid::TimeGrid;
use super::intensity::IntensityModel;
use super::{propagate_assets, AssetStep, Child, Children, Lattice, NodeState};
use crate::error::{BsdeError, Result};

pub const DEFAULT_TREE_CAP: usize = 12;

/// Upper clip `1 - PROBABILITY_CLIP` for one-step default probabilities.
pub const PROBABILITY_CLIP: f64 = 1e-9;

/// Branching of pre-default nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Branching {
    /// `{W up, W down} x {no default, default}`, W moves `±sqrt(dt)` with
    /// probability 1/2 independently of the default branch.
    #[default]
    Product,
    /// `{W up, W down, default}`: the default child keeps W fixed and the
    /// surviving moves are `±sqrt(dt / (1 - p))`. Three outcomes per step
    /// against the three traded directions (`1, dW, dM`) make every payoff
    /// exactly replicable.
    Complete,
}

#[derive(Debug, Clone, Copy)]
pub struct TreeOptions {
    pub branching: Branching,
    pub max_steps: usize,
}

impl Default for TreeOptions {
    fn default() -> Self {
        Self {
            branching: Branching::Product,
            max_steps: DEFAULT_TREE_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct TreeNode {
    w: f64,
    probability: f64,
    first_child: u32,
    parent: u32,
    child_count: u8,
    defaulted: bool,
}

/// Full non-recombining tree on a grid with deterministic intensity.
#[derive(Debug, Clone)]
pub struct ScenarioTree {
    grid: TimeGrid,
    branching: Branching,
    lambda: Vec<f64>,
    default_prob: Vec<f64>,
    levels: Vec<Vec<TreeNode>>,
    assets: Option<Vec<Vec<[f64; 3]>>>,
    warnings: Vec<String>,
}

/// Builds the exact scenario tree. One-step default probabilities are
/// `min(lambda_i dt_i, 1 - PROBABILITY_CLIP)`.
pub fn build_tree(grid: &TimeGrid, intensity: &IntensityModel, options: TreeOptions) -> Result<ScenarioTree> {
    if !intensity.is_deterministic() {
        return Err(BsdeError::InvalidIntensity(
            "the scenario tree requires a deterministic intensity".into(),
        ));
    }
    let n = grid.steps();
    if n > options.max_steps {
        return Err(BsdeError::TreeTooLarge {
            steps: n,
            cap: options.max_steps,
        });
    }
    let mut warnings = Vec::new();
    let mut lambda = Vec::with_capacity(n + 1);
    let mut default_prob = Vec::with_capacity(n);
    for i in 0..=n {
        lambda.push(intensity.rate(grid.time(i), 0.0)?);
    }
    for i in 0..n {
        let raw = lambda[i] * grid.dt(i);
        if raw >= 1.0 {
            warnings.push(format!("step {i}: lambda*dt = {raw} >= 1, default probability clipped"));
        }
        default_prob.push(raw.min(1.0 - PROBABILITY_CLIP));
    }

    let mut levels: Vec<Vec<TreeNode>> = vec![vec![TreeNode {
        w: 0.0,
        probability: 1.0,
        first_child: 0,
        parent: u32::MAX,
        child_count: 0,
        defaulted: false,
    }]];
    for i in 0..n {
        let dt = grid.dt(i);
        let p = default_prob[i];
        let mut next = Vec::new();
        for (idx, node) in levels[i].iter_mut().enumerate() {
            node.first_child = next.len() as u32;
            let (kids, len) = transitions(options.branching, node.defaulted, p, dt);
            node.child_count = len as u8;
            for &(prob, dw, dn) in &kids[..len] {
                next.push(TreeNode {
                    w: node.w + dw,
                    probability: node.probability * prob,
                    first_child: 0,
                    parent: idx as u32,
                    child_count: 0,
                    defaulted: node.defaulted || dn,
                });
            }
        }
        levels.push(next);
    }
    Ok(ScenarioTree {
        grid: grid.clone(),
        branching: options.branching,
        lambda,
        default_prob,
        levels,
        assets: None,
        warnings,
    })
}

type Transition = (f64, f64, bool);

/// `(probability, dW, default?)` for each child.
fn transitions(branching: Branching, defaulted: bool, p: f64, dt: f64) -> ([Transition; 4], usize) {
    let s = dt.sqrt();
    let none = (0.0, 0.0, false);
    if defaulted || p == 0.0 {
        return ([(0.5, s, false), (0.5, -s, false), none, none], 2);
    }
    let q = 0.5 * (1.0 - p);
    match branching {
        Branching::Product => (
            [(q, s, false), (q, -s, false), (0.5 * p, s, true), (0.5 * p, -s, true)],
            4,
        ),
        Branching::Complete => {
            let u = (dt / (1.0 - p)).sqrt();
            ([(q, u, false), (q, -u, false), (p, 0.0, true), none], 3)
        }
    }
}

impl ScenarioTree {
    pub fn branching(&self) -> Branching {
        self.branching
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// One-step default probability used on pre-default nodes of `level`.
    pub fn default_probability(&self, level: usize) -> f64 {
        self.default_prob[level]
    }

    pub fn node_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    /// Index of the ancestor at `target` (<= level) of node `idx` at `level`.
    pub fn ancestor(&self, level: usize, idx: usize, target: usize) -> usize {
        assert!(target <= level);
        let mut i = idx;
        for l in (target + 1..=level).rev() {
            i = self.levels[l][i].parent as usize;
        }
        i
    }

    /// Attaches asset prices by forward propagation from `initial`.
    pub fn with_assets(mut self, initial: [f64; 3], step: &AssetStep<'_>) -> Result<Self> {
        self.assets = Some(propagate_assets(&self, initial, step)?);
        Ok(self)
    }
}

impl Lattice for ScenarioTree {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn level_len(&self, level: usize) -> usize {
        self.levels[level].len()
    }

    fn state(&self, level: usize, idx: usize) -> NodeState {
        let node = &self.levels[level][idx];
        NodeState {
            t: self.grid.time(level),
            w: node.w,
            defaulted: node.defaulted,
            lambda: if node.defaulted { 0.0 } else { self.lambda[level] },
            probability: node.probability,
        }
    }

    fn children(&self, level: usize, idx: usize) -> Children {
        let node = &self.levels[level][idx];
        let first = node.first_child as usize;
        let (kids, len) = transitions(
            self.branching,
            node.defaulted,
            self.default_prob[level],
            self.grid.dt(level),
        );
        let mut out = Children::new();
        for (j, &(prob, dw, dn)) in kids[..len].iter().enumerate() {
            out.push(Child {
                index: first + j,
                prob,
                dw,
                dn: if dn { 1.0 } else { 0.0 },
            });
        }
        out
    }

    fn assets(&self, level: usize, idx: usize) -> Option<[f64; 3]> {
        self.assets.as_ref().map(|a| a[level][idx])
    }

    /// Descendants form a contiguous range at every level.
    fn descendants(&self, level: usize, idx: usize, target: usize) -> Range<usize> {
        assert!(target >= level);
        let (mut lo, mut hi) = (idx, idx);
        for l in level..target {
            let a = &self.levels[l][lo];
            let b = &self.levels[l][hi];
            lo = a.first_child as usize;
            hi = b.first_child as usize + b.child_count as usize - 1;
        }
        lo..hi + 1
    }
}
