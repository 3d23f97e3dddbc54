use super::grid::TimeGrid;
use super::intensity::IntensityModel;
use super::tree::PROBABILITY_CLIP;
use super::{propagate_assets, AssetStep, Child, Children, Lattice, NodeState};
use crate::error::{BsdeError, Result};

/// Recombining version of the product-branching scenario tree.
///
/// Valid whenever every quantity at a node depends only on `(t_i, W_i, N_i)`:
/// terminal claims and drivers are then Markov and the lattice gives the same
/// conditional expectations as the full tree with `O(n^2)` nodes. Level `i`
/// holds `i + 1` surviving nodes followed by `i + 1` defaulted nodes (level 0
/// has the root only); node `j` of a regime sits at `W = (2j - i) sqrt(dt)`.
#[derive(Debug, Clone)]
pub struct RecombiningTree {
    grid: TimeGrid,
    lambda: Vec<f64>,
    default_prob: Vec<f64>,
    /// Probability of being alive at `t_i`.
    alive: Vec<f64>,
    /// Binomial weights `C(i, j) / 2^i`.
    binomial: Vec<Vec<f64>>,
    assets: Option<Vec<Vec<[f64; 3]>>>,
    warnings: Vec<String>,
}

impl RecombiningTree {
    pub fn new(grid: &TimeGrid, intensity: &IntensityModel) -> Result<Self> {
        if !intensity.is_deterministic() {
            return Err(BsdeError::InvalidIntensity(
                "the recombining lattice requires a deterministic intensity".into(),
            ));
        }
        if !grid.is_uniform() {
            return Err(BsdeError::InvalidGrid(
                "the recombining lattice requires a uniform grid".into(),
            ));
        }
        let n = grid.steps();
        let lambda = (0..=n)
            .map(|i| intensity.rate(grid.time(i), 0.0))
            .collect::<Result<Vec<_>>>()?;
        let mut warnings = Vec::new();
        let mut default_prob = Vec::with_capacity(n);
        let mut alive = vec![1.0];
        let mut binomial = vec![vec![1.0]];
        for i in 0..n {
            let raw = lambda[i] * grid.dt(i);
            if raw >= 1.0 {
                warnings.push(format!("step {i}: lambda*dt = {raw} >= 1, default probability clipped"));
            }
            let p = raw.min(1.0 - PROBABILITY_CLIP);
            default_prob.push(p);
            alive.push(alive[i] * (1.0 - p));
            let prev = &binomial[i];
            let next: Vec<f64> = (0..=i + 1)
                .map(|j| {
                    let down = if j <= i { prev[j] } else { 0.0 };
                    let up = if j >= 1 { prev[j - 1] } else { 0.0 };
                    0.5 * (up + down)
                })
                .collect();
            binomial.push(next);
        }
        Ok(Self {
            grid: grid.clone(),
            lambda,
            default_prob,
            alive,
            binomial,
            assets: None,
            warnings,
        })
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn default_probability(&self, level: usize) -> f64 {
        self.default_prob[level]
    }

    /// Node index of `(j, regime)` at `level`.
    pub fn index(&self, level: usize, j: usize, defaulted: bool) -> usize {
        if defaulted {
            level + 1 + j
        } else {
            j
        }
    }

    /// Linear interpolation weights in `W` within a regime: returns
    /// `(lower index, upper index, weight of upper)` with the state clamped to
    /// the lattice range.
    pub fn locate(&self, level: usize, w: f64, defaulted: bool) -> (usize, usize, f64) {
        if level == 0 {
            return (0, 0, 0.0);
        }
        let s = self.grid.dt(0).sqrt();
        let x = ((w / s + level as f64) / 2.0).clamp(0.0, level as f64);
        let lo = (x.floor() as usize).min(level - 1);
        let frac = x - lo as f64;
        (
            self.index(level, lo, defaulted),
            self.index(level, lo + 1, defaulted),
            frac,
        )
    }

    /// Attaches asset prices; fails when the transition does not recombine.
    pub fn with_assets(mut self, initial: [f64; 3], step: &AssetStep<'_>) -> Result<Self> {
        self.assets = Some(propagate_assets(&self, initial, step)?);
        Ok(self)
    }
}

impl Lattice for RecombiningTree {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn level_len(&self, level: usize) -> usize {
        if level == 0 {
            1
        } else {
            2 * (level + 1)
        }
    }

    fn state(&self, level: usize, idx: usize) -> NodeState {
        let width = level + 1;
        let defaulted = level > 0 && idx >= width;
        let j = if defaulted { idx - width } else { idx };
        let mass = if defaulted {
            1.0 - self.alive[level]
        } else {
            self.alive[level]
        };
        let s = if level == 0 { 0.0 } else { self.grid.dt(0).sqrt() };
        NodeState {
            t: self.grid.time(level),
            w: (2.0 * j as f64 - level as f64) * s,
            defaulted,
            lambda: if defaulted { 0.0 } else { self.lambda[level] },
            probability: self.binomial[level][j] * mass,
        }
    }

    fn children(&self, level: usize, idx: usize) -> Children {
        let width = level + 1;
        let defaulted = level > 0 && idx >= width;
        let j = if defaulted { idx - width } else { idx };
        let s = self.grid.dt(level).sqrt();
        let p = self.default_prob[level];
        let mut out = Children::new();
        let next = level + 1;
        if defaulted || p == 0.0 {
            for (jj, dw) in [(j + 1, s), (j, -s)] {
                out.push(Child {
                    index: self.index(next, jj, defaulted),
                    prob: 0.5,
                    dw,
                    dn: 0.0,
                });
            }
            return out;
        }
        let q = 0.5 * (1.0 - p);
        for (jj, dw, d, prob) in [
            (j + 1, s, false, q),
            (j, -s, false, q),
            (j + 1, s, true, 0.5 * p),
            (j, -s, true, 0.5 * p),
        ] {
            out.push(Child {
                index: self.index(next, jj, d),
                prob,
                dw,
                dn: if d { 1.0 } else { 0.0 },
            });
        }
        out
    }

    fn assets(&self, level: usize, idx: usize) -> Option<[f64; 3]> {
        self.assets.as_ref().map(|a| a[level][idx])
    }
}
