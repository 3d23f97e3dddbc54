use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use super::grid::TimeGrid;
use super::intensity::IntensityModel;
use crate::error::{BsdeError, Result};
use crate::stats::MeanEstimate;

const NO_DEFAULT: u32 = u32::MAX;

/// Independent Monte Carlo realizations of `(W, N, lambda, M)` on a grid.
///
/// Storage is path-major. Default indicators and compensated increments are
/// derived from the default step, so only the Brownian increments (and, for
/// state-dependent intensities, the pre-default intensities) are stored.
#[derive(Debug, Clone)]
pub struct ScenarioSet {
    grid: TimeGrid,
    intensity: IntensityModel,
    seed: u64,
    count: usize,
    dw: Vec<f64>,
    default_step: Vec<u32>,
    default_time: Vec<f64>,
    /// Deterministic intensity: `lambda(t_i)` for i = 0..=n.
    curve: Vec<f64>,
    /// State-dependent intensity: pre-default `lambda_i` per (path, step).
    state_lambda: Option<Vec<f64>>,
    terminal_assets: Option<Vec<[f64; 3]>>,
}

/// Borrowed view of one path of a [`ScenarioSet`].
#[derive(Debug, Clone, Copy)]
pub struct ScenarioPath<'a> {
    set: &'a ScenarioSet,
    index: usize,
}

/// Seed of the random stream used for path `index`.
pub fn path_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Generates `count` independent paths.
///
/// The default time uses the exponential-threshold method: one `E ~ Exp(1)` per
/// path, default at the first node where the cumulative (trapezoidal) integral
/// of the intensity exceeds `E`. State-dependent intensities are frozen over
/// each step at their value on the state at the left node.
pub fn simulate_paths(grid: &TimeGrid, intensity: &IntensityModel, count: usize, seed: u64) -> Result<ScenarioSet> {
    if count == 0 {
        return Err(BsdeError::InvalidArgument("path count must be >= 1".into()));
    }
    let n = grid.steps();
    let curve = if intensity.is_deterministic() {
        (0..=n)
            .map(|i| intensity.rate(grid.time(i), 0.0))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let state = !intensity.is_deterministic();

    let results: Vec<Result<PathDraw>> = (0..count)
        .into_par_iter()
        .map(|p| draw_path(grid, intensity, &curve, state, seed, p))
        .collect();

    let mut dw = Vec::with_capacity(count * n);
    let mut default_step = Vec::with_capacity(count);
    let mut default_time = Vec::with_capacity(count);
    let mut state_lambda = state.then(|| Vec::with_capacity(count * n));
    for r in results {
        let d = r?;
        dw.extend_from_slice(&d.dw);
        default_step.push(d.default_step.map_or(NO_DEFAULT, |s| s as u32));
        default_time.push(d.default_time);
        if let Some(sl) = state_lambda.as_mut() {
            sl.extend_from_slice(&d.lambda);
        }
    }
    Ok(ScenarioSet {
        grid: grid.clone(),
        intensity: intensity.clone(),
        seed,
        count,
        dw,
        default_step,
        default_time,
        curve,
        state_lambda,
        terminal_assets: None,
    })
}

struct PathDraw {
    dw: Vec<f64>,
    lambda: Vec<f64>,
    default_step: Option<usize>,
    default_time: f64,
}

fn draw_path(
    grid: &TimeGrid,
    intensity: &IntensityModel,
    curve: &[f64],
    state: bool,
    seed: u64,
    index: usize,
) -> Result<PathDraw> {
    let n = grid.steps();
    let mut rng = path_rng(seed, index);
    let threshold: f64 = rng.sample(Exp1);
    let dw: Vec<f64> = (0..n)
        .map(|i| grid.dt(i).sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let mut lambda = Vec::new();
    let mut cumulative = 0.0;
    let mut w = 0.0;
    let mut default_step = None;
    let mut default_time = f64::INFINITY;
    for i in 0..n {
        let dt = grid.dt(i);
        let step_integral = if state {
            let l = intensity.rate(grid.time(i), w)?;
            lambda.push(l);
            l * dt
        } else {
            0.5 * (curve[i] + curve[i + 1]) * dt
        };
        if default_step.is_none() && cumulative + step_integral > threshold {
            default_step = Some(i);
            let frac = (threshold - cumulative) / step_integral;
            default_time = grid.time(i) + frac * dt;
        }
        cumulative += step_integral;
        w += dw[i];
        if default_step.is_some() && state {
            // remaining intensities are zero after default; keep the stored
            // length fixed
            lambda.resize(n, 0.0);
            break;
        }
    }
    Ok(PathDraw {
        dw,
        lambda,
        default_step,
        default_time,
    })
}

impl ScenarioSet {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn intensity(&self) -> &IntensityModel {
        &self.intensity
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn path(&self, index: usize) -> ScenarioPath<'_> {
        assert!(index < self.count, "path index out of range");
        ScenarioPath { set: self, index }
    }

    pub fn paths(&self) -> impl Iterator<Item = ScenarioPath<'_>> + '_ {
        (0..self.count).map(move |i| self.path(i))
    }

    /// Terminal `(S0, S1, S2)` values, when a market has been attached.
    pub fn terminal_assets(&self) -> Option<&[[f64; 3]]> {
        self.terminal_assets.as_deref()
    }

    pub fn with_terminal_assets(mut self, assets: Vec<[f64; 3]>) -> Result<Self> {
        if assets.len() != self.count {
            return Err(BsdeError::Mismatch(format!(
                "{} asset rows for {} paths",
                assets.len(),
                self.count
            )));
        }
        self.terminal_assets = Some(assets);
        Ok(self)
    }

    /// Writes `path_id,step,t,dW,dN,lambda,dM` rows (plus `density` when given).
    pub fn write_csv<W: Write>(&self, mut out: W, densities: Option<&[f64]>) -> io::Result<()> {
        if let Some(d) = densities {
            if d.len() != self.count {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidInput,
                    "one density per path is required",
                ));
            }
            writeln!(out, "path_id,step,t,dW,dN,lambda,dM,density")?;
        } else {
            writeln!(out, "path_id,step,t,dW,dN,lambda,dM")?;
        }
        for p in self.paths() {
            for i in 0..self.grid.steps() {
                write!(
                    out,
                    "{},{},{},{},{},{},{}",
                    p.index,
                    i,
                    self.grid.time(i),
                    p.dw(i),
                    p.dn(i),
                    p.lambda(i),
                    p.dm(i)
                )?;
                match densities {
                    Some(d) => writeln!(out, ",{}", d[p.index])?,
                    None => writeln!(out)?,
                }
            }
        }
        Ok(())
    }
}

impl<'a> ScenarioPath<'a> {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn grid(&self) -> &'a TimeGrid {
        &self.set.grid
    }

    pub fn steps(&self) -> usize {
        self.set.grid.steps()
    }

    pub fn dws(&self) -> &'a [f64] {
        let n = self.steps();
        &self.set.dw[self.index * n..(self.index + 1) * n]
    }

    pub fn dw(&self, i: usize) -> f64 {
        self.set.dw[self.index * self.steps() + i]
    }

    /// Brownian level `W_{t_i}`.
    pub fn w(&self, i: usize) -> f64 {
        self.dws()[..i].iter().sum()
    }

    /// Step `i` such that the default falls in `(t_i, t_{i+1}]`.
    pub fn default_step(&self) -> Option<usize> {
        match self.set.default_step[self.index] {
            NO_DEFAULT => None,
            s => Some(s as usize),
        }
    }

    /// Default time (interpolated inside its step), or +inf when it lies beyond T.
    pub fn default_time(&self) -> f64 {
        self.set.default_time[self.index]
    }

    /// `N_{t_i} = 1`: default happened at or before `t_i`.
    pub fn defaulted_at(&self, i: usize) -> bool {
        self.default_step().is_some_and(|d| d < i)
    }

    /// Intensity on step `i`; zero strictly after the default step.
    pub fn lambda(&self, i: usize) -> f64 {
        if self.defaulted_at(i) {
            return 0.0;
        }
        match &self.set.state_lambda {
            Some(l) => l[self.index * self.steps() + i],
            None => self.set.curve[i],
        }
    }

    pub fn dn(&self, i: usize) -> f64 {
        if self.default_step() == Some(i) {
            1.0
        } else {
            0.0
        }
    }

    /// `dN_i - lambda_i * dt_i`.
    pub fn dm(&self, i: usize) -> f64 {
        self.dn(i) - self.lambda(i) * self.set.grid.dt(i)
    }

    /// Probability that a path alive at `t_i` defaults during step `i`, under the
    /// sampling law used by [`simulate_paths`].
    pub fn step_default_probability(&self, i: usize) -> f64 {
        if self.defaulted_at(i) {
            return 0.0;
        }
        let dt = self.set.grid.dt(i);
        let integral = match &self.set.state_lambda {
            Some(_) => self.lambda(i) * dt,
            None => 0.5 * (self.set.curve[i] + self.set.curve[i + 1]) * dt,
        };
        -(-integral).exp_m1()
    }

    pub fn terminal_n(&self) -> f64 {
        if self.default_step().is_some() {
            1.0
        } else {
            0.0
        }
    }

    /// `M_T = N_T - sum_i lambda_i dt_i`.
    pub fn terminal_m(&self) -> f64 {
        let comp: f64 = (0..self.steps()).map(|i| self.lambda(i) * self.set.grid.dt(i)).sum();
        self.terminal_n() - comp
    }

    pub fn terminal_w(&self) -> f64 {
        self.dws().iter().sum()
    }
}

/// Sample mean and standard error of `M_T` across paths.
pub fn compensator_residual(paths: &ScenarioSet) -> MeanEstimate {
    let values: Vec<f64> = (0..paths.len())
        .into_par_iter()
        .map(|i| paths.path(i).terminal_m())
        .collect();
    MeanEstimate::from_samples(&values)
}
