use std::fmt;
use std::sync::Arc;

use crate::error::{BsdeError, Result};
use crate::expr::Expr;
use crate::scenario::TimeGrid;

type RateFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Simpson sub-intervals per grid step when integrating dividend rates.
const SIMPSON_PANELS: usize = 16;

/// Deterministic finite-variation dividend process
/// `D_t = int_0^t d(s) ds + sum_{tau_k <= t} dD_k` with `D_0 = 0`.
///
/// The rate is a weighted sum of component rates so that sums and scalings of
/// dividend processes stay exact.
#[derive(Clone, Default)]
pub struct DividendProcess {
    rates: Vec<RateTerm>,
    jumps: Vec<(f64, f64)>,
}

/// `weight * f(t)` on `t <= end`.
#[derive(Clone)]
struct RateTerm {
    weight: f64,
    f: RateFn,
    end: f64,
}

impl fmt::Debug for DividendProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DividendProcess")
            .field("rate_terms", &self.rates.len())
            .field("jumps", &self.jumps)
            .finish()
    }
}

impl DividendProcess {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with_rate(mut self, rate: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.rates.push(RateTerm {
            weight: 1.0,
            f: Arc::new(rate),
            end: f64::INFINITY,
        });
        self
    }

    /// Rate given as an expression in `t`.
    pub fn with_rate_expr(self, source: &str) -> Result<Self> {
        let e = Expr::parse(source, &["t"])?;
        Ok(self.with_rate(move |t| e.eval(&[t])))
    }

    pub fn with_constant_rate(self, rate: f64) -> Self {
        self.with_rate(move |_| rate)
    }

    pub fn with_jump(mut self, time: f64, size: f64) -> Self {
        self.jumps.push((time, size));
        self
    }

    pub fn jumps(&self) -> &[(f64, f64)] {
        &self.jumps
    }

    pub fn is_zero(&self) -> bool {
        self.rates.iter().all(|r| r.weight == 0.0) && self.jumps.iter().all(|(_, s)| *s == 0.0)
    }

    pub fn rate(&self, t: f64) -> f64 {
        self.rates
            .iter()
            .filter(|r| t <= r.end)
            .map(|r| r.weight * (r.f)(t))
            .sum()
    }

    /// `self + other`.
    pub fn plus(&self, other: &DividendProcess) -> Self {
        let mut out = self.clone();
        out.rates.extend(other.rates.iter().cloned());
        out.jumps.extend(other.jumps.iter().copied());
        out
    }

    /// `c * self`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rates: self
                .rates
                .iter()
                .map(|r| RateTerm {
                    weight: c * r.weight,
                    ..r.clone()
                })
                .collect(),
            jumps: self.jumps.iter().map(|(t, s)| (*t, c * s)).collect(),
        }
    }

    /// `D_{t ^ stop}`: the rate vanishes after `stop` and later jumps are dropped.
    pub fn stopped_at(&self, stop: f64) -> Self {
        let mut out = self.clone();
        out.jumps.retain(|(t, _)| *t <= stop + 1e-12);
        for r in &mut out.rates {
            r.end = r.end.min(stop);
        }
        out
    }

    /// `self - other`.
    pub fn minus(&self, other: &DividendProcess) -> Self {
        self.plus(&other.scaled(-1.0))
    }

    /// Checks `D_0 = 0` (jump times in `(0, T]`) and finiteness.
    pub fn validate(&self, horizon: f64) -> Result<()> {
        for &(t, s) in &self.jumps {
            if !(t > 0.0 && t <= horizon + 1e-12) || !s.is_finite() {
                return Err(BsdeError::InvalidArgument(format!(
                    "dividend jump ({t}, {s}) must have a time in (0, {horizon}] and a finite size"
                )));
            }
        }
        Ok(())
    }

    /// Increment over `(t_i, t_{i+1}]`, credited at `t_i`. Jumps exactly at the
    /// horizon are excluded (see [`terminal_jump`](Self::terminal_jump)).
    pub fn increment(&self, grid: &TimeGrid, i: usize) -> f64 {
        self.window(grid.time(i), grid.time(i + 1), grid.horizon())
    }

    fn window(&self, a: f64, b: f64, exclude: f64) -> f64 {
        let mut total = 0.0;
        for r in &self.rates {
            let b = b.min(r.end);
            if b <= a {
                continue;
            }
            let f = |t: f64| r.weight * (r.f)(t);
            let h = (b - a) / SIMPSON_PANELS as f64;
            let mut s = f(a) + f(b);
            for k in 1..SIMPSON_PANELS {
                let w = if k % 2 == 1 { 4.0 } else { 2.0 };
                s += w * f(a + k as f64 * h);
            }
            total += s * h / 3.0;
        }
        for &(t, size) in &self.jumps {
            let excluded = (t - exclude).abs() <= 1e-12;
            if !excluded && t > a + 1e-12 && t <= b + 1e-12 {
                total += size;
            }
        }
        total
    }

    /// Increments for every step of the grid.
    pub fn increments(&self, grid: &TimeGrid) -> Vec<f64> {
        (0..grid.steps()).map(|i| self.increment(grid, i)).collect()
    }

    /// Increments of steps `0..m` for a problem with maturity `t_m`, and the
    /// jump at `t_m` that goes into the terminal condition.
    pub fn schedule(&self, grid: &TimeGrid, m: usize) -> (Vec<f64>, f64) {
        let tm = grid.time(m);
        let inc = (0..m)
            .map(|i| self.window(grid.time(i), grid.time(i + 1), tm))
            .collect();
        (inc, self.terminal_jump(tm))
    }

    /// Sum of jumps at `maturity`; added to the terminal condition.
    pub fn terminal_jump(&self, maturity: f64) -> f64 {
        self.jumps
            .iter()
            .filter(|(t, _)| (t - maturity).abs() <= 1e-12)
            .map(|(_, s)| s)
            .sum()
    }

    /// `D_T` on the grid.
    pub fn total(&self, grid: &TimeGrid) -> f64 {
        self.increments(grid).iter().sum::<f64>() + self.terminal_jump(grid.horizon())
    }

    /// Non-decreasing on the grid: every increment (and the terminal jump) is
    /// at least `-tol`, and the rate is nonnegative at the Simpson nodes.
    pub fn is_nondecreasing(&self, grid: &TimeGrid, tol: f64) -> bool {
        let rate_ok = (0..grid.steps()).all(|i| {
            let (a, b) = (grid.time(i), grid.time(i + 1));
            (0..=SIMPSON_PANELS).all(|k| self.rate(a + (b - a) * k as f64 / SIMPSON_PANELS as f64) >= -tol)
        });
        rate_ok && self.increments(grid).iter().all(|d| *d >= -tol) && self.terminal_jump(grid.horizon()) >= -tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn increments_and_terminal_jump() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        let d = DividendProcess::none()
            .with_rate(|t| 3.0 * t * t)
            .with_jump(0.5, 2.0)
            .with_jump(1.0, 5.0);
        let inc = d.increments(&g);
        // int_{0.25}^{0.5} 3t^2 = 0.125 - 0.015625, plus the jump at 0.5
        assert!((inc[1] - (0.109375 + 2.0)).abs() < 1e-14);
        assert!((inc.iter().sum::<f64>() - 3.0).abs() < 1e-14);
        assert_eq!(d.terminal_jump(1.0), 5.0);
        assert!((d.total(&g) - 8.0).abs() < 1e-14);
        assert!(d.is_nondecreasing(&g, 0.0));
        assert!(!d.scaled(-1.0).is_nondecreasing(&g, 0.0));
        assert!(d.minus(&d).total(&g).abs() < 1e-14);
        let (inc, jump) = d.schedule(&g, 2);
        assert_eq!(jump, 2.0);
        assert!((inc[1] - 0.109375).abs() < 1e-14);
    }

    #[test]
    fn validation() {
        assert!(DividendProcess::none().with_jump(0.0, 1.0).validate(1.0).is_err());
        assert!(DividendProcess::none().with_jump(1.5, 1.0).validate(1.0).is_err());
        assert!(DividendProcess::none().with_jump(1.0, 1.0).validate(1.0).is_ok());
    }
}
