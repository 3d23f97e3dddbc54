//! Drivers `g(t, y, z, k)` of the BSDE and their structural checks.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{BsdeError, Result};
use crate::expr::Expr;
use crate::scenario::path_rng;

/// Time and regime at which a driver is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriverContext {
    pub t: f64,
    /// Realized intensity `lambda_t` (0 after default).
    pub lambda: f64,
    pub defaulted: bool,
}

type RegimeFn = Arc<dyn Fn(f64, bool) -> f64 + Send + Sync>;

/// Deterministic coefficient `c(t, default flag)` with a declared bound on `|c|`.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    Regime { pre: f64, post: f64 },
    Function { f: RegimeFn, bound: f64 },
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(v) => write!(f, "{v}"),
            Coefficient::Regime { pre, post } => write!(f, "Regime({pre}, {post})"),
            Coefficient::Function { bound, .. } => write!(f, "Function(|c| <= {bound})"),
        }
    }
}

impl From<f64> for Coefficient {
    fn from(v: f64) -> Self {
        Coefficient::Constant(v)
    }
}

impl Coefficient {
    pub fn function(f: impl Fn(f64, bool) -> f64 + Send + Sync + 'static, bound: f64) -> Self {
        Coefficient::Function { f: Arc::new(f), bound }
    }

    /// Expression over `t` and `n` (the default indicator, 0 or 1).
    pub fn from_expr(source: &str, bound: f64) -> Result<Self> {
        let e = Expr::parse(source, &["t", "n"])?;
        Ok(Self::function(
            move |t, d| e.eval(&[t, if d { 1.0 } else { 0.0 }]),
            bound,
        ))
    }

    pub fn at(&self, t: f64, defaulted: bool) -> f64 {
        match self {
            Coefficient::Constant(v) => *v,
            Coefficient::Regime { pre, post } => {
                if defaulted {
                    *post
                } else {
                    *pre
                }
            }
            Coefficient::Function { f, .. } => f(t, defaulted),
        }
    }

    /// Declared bound on `|c|`.
    pub fn bound(&self) -> f64 {
        match self {
            Coefficient::Constant(v) => v.abs(),
            Coefficient::Regime { pre, post } => pre.abs().max(post.abs()),
            Coefficient::Function { bound, .. } => *bound,
        }
    }
}

/// Coefficients of `g = phi + delta y + beta z + gamma lambda k`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LinearCoefficients {
    pub phi: f64,
    pub delta: f64,
    pub beta: f64,
    pub gamma: f64,
}

type ImpactFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;
type CustomFn = Arc<dyn Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum DriverVariant {
    Zero,
    LambdaLinear {
        phi: Coefficient,
        delta: Coefficient,
        beta: Coefficient,
        gamma: Coefficient,
    },
    PerfectMarket {
        r: Coefficient,
        theta1: Coefficient,
        theta2: Coefficient,
    },
    /// Perfect-market driver plus `impact(t, y, phi1, phi2) lambda k` with the
    /// strategy `phi1 = (z + sigma2 k) / sigma1`, `phi2 = -k`.
    LargeInvestor {
        r: Coefficient,
        theta1: Coefficient,
        theta2: Coefficient,
        sigma1: Coefficient,
        sigma2: Coefficient,
        impact: ImpactFn,
    },
    /// `f(t, y, z, k, lambda)`.
    Custom {
        f: CustomFn,
        label: String,
    },
}

impl DriverVariant {
    pub fn name(&self) -> &'static str {
        match self {
            DriverVariant::Zero => "zero",
            DriverVariant::LambdaLinear { .. } => "lambda_linear",
            DriverVariant::PerfectMarket { .. } => "perfect_market",
            DriverVariant::LargeInvestor { .. } => "large_investor",
            DriverVariant::Custom { .. } => "custom",
        }
    }
}

/// A lambda-admissible driver with its declared lambda-constant `C`.
#[derive(Clone)]
pub struct Driver {
    variant: DriverVariant,
    lambda_constant: f64,
    stop: Option<f64>,
}

impl fmt::Debug for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Driver")
            .field("variant", &self.variant.name())
            .field("lambda_constant", &self.lambda_constant)
            .field("stop", &self.stop)
            .finish()
    }
}

fn check_constant(c: f64) -> Result<f64> {
    if !(c.is_finite() && c >= 0.0) {
        return Err(BsdeError::InvalidArgument(format!(
            "lambda-constant must be finite and >= 0, got {c}"
        )));
    }
    Ok(c)
}

impl Driver {
    pub fn zero() -> Self {
        Self {
            variant: DriverVariant::Zero,
            lambda_constant: 0.0,
            stop: None,
        }
    }

    /// `C = max(|delta|, |beta|, |gamma| sqrt(lambda_max))` from the declared bounds.
    pub fn lambda_linear(
        phi: impl Into<Coefficient>,
        delta: impl Into<Coefficient>,
        beta: impl Into<Coefficient>,
        gamma: impl Into<Coefficient>,
        lambda_max: f64,
    ) -> Result<Self> {
        let (phi, delta, beta, gamma) = (phi.into(), delta.into(), beta.into(), gamma.into());
        let c = delta.bound().max(beta.bound()).max(gamma.bound() * lambda_max.sqrt());
        Ok(Self {
            lambda_constant: check_constant(c)?,
            variant: DriverVariant::LambdaLinear {
                phi,
                delta,
                beta,
                gamma,
            },
            stop: None,
        })
    }

    /// `g = -r y - theta1 z - theta2 lambda k`.
    pub fn perfect_market(
        r: impl Into<Coefficient>,
        theta1: impl Into<Coefficient>,
        theta2: impl Into<Coefficient>,
        lambda_max: f64,
    ) -> Result<Self> {
        let (r, theta1, theta2) = (r.into(), theta1.into(), theta2.into());
        let c = r.bound().max(theta1.bound()).max(theta2.bound() * lambda_max.sqrt());
        Ok(Self {
            lambda_constant: check_constant(c)?,
            variant: DriverVariant::PerfectMarket { r, theta1, theta2 },
            stop: None,
        })
    }

    pub fn custom(
        f: impl Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
        lambda_constant: f64,
        label: impl Into<String>,
    ) -> Result<Self> {
        Ok(Self {
            variant: DriverVariant::Custom {
                f: Arc::new(f),
                label: label.into(),
            },
            lambda_constant: check_constant(lambda_constant)?,
            stop: None,
        })
    }

    /// Custom driver from an expression over `t, y, z, k, lambda`.
    pub fn from_expr(source: &str, lambda_constant: f64) -> Result<Self> {
        let e = Expr::parse(source, &["t", "y", "z", "k", "lambda"])?;
        let label = e.source().to_string();
        Self::custom(move |t, y, z, k, l| e.eval(&[t, y, z, k, l]), lambda_constant, label)
    }

    pub fn variant(&self) -> &DriverVariant {
        &self.variant
    }

    pub fn lambda_constant(&self) -> f64 {
        self.lambda_constant
    }

    /// Overrides the declared lambda-constant.
    pub fn with_lambda_constant(mut self, c: f64) -> Result<Self> {
        self.lambda_constant = check_constant(c)?;
        Ok(self)
    }

    /// Driver `g 1_{t <= stop}`: zero on every step starting at or after `stop`.
    pub fn stopped_at(mut self, stop: f64) -> Self {
        self.stop = Some(stop);
        self
    }

    pub fn stop(&self) -> Option<f64> {
        self.stop
    }

    fn is_stopped(&self, t: f64) -> bool {
        self.stop.is_some_and(|s| t >= s - 1e-12)
    }

    /// Unchecked evaluation; `k` is replaced by 0 when `lambda = 0`.
    pub fn value(&self, ctx: &DriverContext, y: f64, z: f64, k: f64) -> f64 {
        if self.is_stopped(ctx.t) {
            return 0.0;
        }
        let l = ctx.lambda;
        let k = if l == 0.0 { 0.0 } else { k };
        let (t, d) = (ctx.t, ctx.defaulted);
        match &self.variant {
            DriverVariant::Zero => 0.0,
            DriverVariant::LambdaLinear {
                phi,
                delta,
                beta,
                gamma,
            } => phi.at(t, d) + delta.at(t, d) * y + beta.at(t, d) * z + gamma.at(t, d) * l * k,
            DriverVariant::PerfectMarket { r, theta1, theta2 } => {
                -(r.at(t, d) * y + theta1.at(t, d) * z + theta2.at(t, d) * l * k)
            }
            DriverVariant::LargeInvestor {
                r,
                theta1,
                theta2,
                sigma1,
                sigma2,
                impact,
            } => {
                let base = -(r.at(t, d) * y + theta1.at(t, d) * z + theta2.at(t, d) * l * k);
                if k == 0.0 {
                    return base;
                }
                let phi1 = (z + sigma2.at(t, d) * k) / sigma1.at(t, d);
                base + impact(t, y, phi1, -k) * l * k
            }
            DriverVariant::Custom { f, .. } => f(t, y, z, k, l),
        }
    }

    /// Checked evaluation of `g(t, y, z, k)`.
    pub fn evaluate(&self, ctx: &DriverContext, y: f64, z: f64, k: f64) -> Result<f64> {
        for (name, v) in [("t", ctx.t), ("y", y), ("z", z), ("k", k), ("lambda", ctx.lambda)] {
            if !v.is_finite() {
                return Err(BsdeError::NonFinite(format!("driver argument {name} = {v}")));
            }
        }
        if ctx.lambda < 0.0 {
            return Err(BsdeError::InvalidIntensity(format!(
                "negative intensity {}",
                ctx.lambda
            )));
        }
        let v = self.value(ctx, y, z, k);
        if !v.is_finite() {
            return Err(BsdeError::NonFinite(format!(
                "driver value {v} at t = {}, y = {y}, z = {z}, k = {k}",
                ctx.t
            )));
        }
        Ok(v)
    }

    /// Linear coefficients at `(t, regime)` when the driver is lambda-linear.
    pub fn linear_at(&self, t: f64, defaulted: bool) -> Option<LinearCoefficients> {
        let linear = match &self.variant {
            DriverVariant::Zero => LinearCoefficients::default(),
            DriverVariant::LambdaLinear {
                phi,
                delta,
                beta,
                gamma,
            } => LinearCoefficients {
                phi: phi.at(t, defaulted),
                delta: delta.at(t, defaulted),
                beta: beta.at(t, defaulted),
                gamma: gamma.at(t, defaulted),
            },
            DriverVariant::PerfectMarket { r, theta1, theta2 } => LinearCoefficients {
                phi: 0.0,
                delta: -r.at(t, defaulted),
                beta: -theta1.at(t, defaulted),
                gamma: -theta2.at(t, defaulted),
            },
            _ => return None,
        };
        if self.is_stopped(t) {
            return Some(LinearCoefficients::default());
        }
        Some(linear)
    }

    pub fn is_linear(&self) -> bool {
        matches!(
            self.variant,
            DriverVariant::Zero | DriverVariant::LambdaLinear { .. } | DriverVariant::PerfectMarket { .. }
        )
    }

    /// Randomized check of
    /// `|g(y1,z1,k1) - g(y2,z2,k2)| <= C (|y1-y2| + |z1-z2| + sqrt(lambda)|k1-k2|)`.
    pub fn verify_admissibility(
        &self,
        trials: usize,
        seed: u64,
        sampling: &SamplingBox,
    ) -> Result<AdmissibilityReport> {
        if trials == 0 {
            return Err(BsdeError::InvalidArgument("at least one trial is required".into()));
        }
        let mut rng = path_rng(seed, 0);
        let mut draw = |(lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
        let c = self.lambda_constant;
        let mut report = AdmissibilityReport {
            worst_ratio: 0.0,
            worst_case: None,
            violations: 0,
            samples: 0,
            lambda_constant: c,
        };
        for _ in 0..trials {
            let t = draw(sampling.t);
            let lambda = draw(sampling.lambda);
            let defaulted = lambda == 0.0;
            let a = [draw(sampling.y), draw(sampling.z), draw(sampling.k)];
            let b = [draw(sampling.y), draw(sampling.z), draw(sampling.k)];
            let ctx = DriverContext { t, lambda, defaulted };
            let ga = self.evaluate(&ctx, a[0], a[1], a[2])?;
            let gb = self.evaluate(&ctx, b[0], b[1], b[2])?;
            let denom = (a[0] - b[0]).abs() + (a[1] - b[1]).abs() + lambda.sqrt() * (a[2] - b[2]).abs();
            let diff = (ga - gb).abs();
            report.samples += 1;
            let ratio = if denom > 0.0 {
                diff / denom
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            if diff > c * denom * (1.0 + 1e-9) + 1e-12 {
                report.violations += 1;
            }
            if ratio > report.worst_ratio || report.worst_case.is_none() {
                report.worst_ratio = ratio;
                report.worst_case = Some(WorstCase {
                    t,
                    lambda,
                    first: a,
                    second: b,
                });
            }
        }
        Ok(report)
    }
}

/// Uniform sampling ranges for [`Driver::verify_admissibility`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingBox {
    pub t: (f64, f64),
    pub lambda: (f64, f64),
    pub y: (f64, f64),
    pub z: (f64, f64),
    pub k: (f64, f64),
}

impl SamplingBox {
    /// `[0, T] x [0, lambda_max]` with `(y, z, k)` in `[-r, r]^3`.
    pub fn symmetric(horizon: f64, lambda_max: f64, radius: f64) -> Self {
        Self {
            t: (0.0, horizon),
            lambda: (0.0, lambda_max),
            y: (-radius, radius),
            z: (-radius, radius),
            k: (-radius, radius),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstCase {
    pub t: f64,
    pub lambda: f64,
    /// `(y, z, k)` of the two sampled points.
    pub first: [f64; 3],
    pub second: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    pub worst_ratio: f64,
    pub worst_case: Option<WorstCase>,
    pub violations: usize,
    pub samples: usize,
    pub lambda_constant: f64,
}

/// `theta2 = -(mu2 - sigma2 theta1 - r) / lambda` before default; 0 when `lambda = 0`.
pub fn theta2_from_drifts(mu2: f64, sigma2: f64, theta1: f64, r: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    -(mu2 - sigma2 * theta1 - r) / lambda
}

/// Large-investor driver
/// `-r y - theta1 z - theta2 lambda k + impact(t, y, (z + sigma2 k)/sigma1, -k) lambda k`.
///
/// `impact_bound` bounds `|impact|`; it enters the declared lambda-constant
/// together with the perfect-market coefficients.
#[allow(clippy::too_many_arguments)]
pub fn large_investor_driver(
    r: impl Into<Coefficient>,
    theta1: impl Into<Coefficient>,
    theta2: impl Into<Coefficient>,
    sigma1: impl Into<Coefficient>,
    sigma2: impl Into<Coefficient>,
    impact: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
    impact_bound: f64,
    lambda_max: f64,
) -> Result<Driver> {
    let (r, theta1, theta2, sigma1, sigma2) = (r.into(), theta1.into(), theta2.into(), sigma1.into(), sigma2.into());
    let zero_vol = match &sigma1 {
        Coefficient::Constant(v) => *v == 0.0,
        Coefficient::Regime { pre, post } => *pre == 0.0 || *post == 0.0,
        Coefficient::Function { .. } => false,
    };
    if zero_vol {
        return Err(BsdeError::InvalidArgument("sigma1 must be nonzero".into()));
    }
    // the feedback term is only Lipschitz in k when bounded; this is the
    // declared bound, not a proof
    let c = r
        .bound()
        .max(theta1.bound())
        .max((theta2.bound() + impact_bound) * lambda_max.sqrt());
    Ok(Driver {
        lambda_constant: check_constant(c)?,
        variant: DriverVariant::LargeInvestor {
            r,
            theta1,
            theta2,
            sigma1,
            sigma2,
            impact: Arc::new(impact),
        },
        stop: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const PRE: DriverContext = DriverContext {
        t: 0.3,
        lambda: 1.0,
        defaulted: false,
    };

    #[test]
    fn perfect_market_substitution() {
        let d = Driver::perfect_market(0.05, 0.2, 0.3, 1.0).unwrap();
        let v = d.evaluate(&PRE, 100.0, 10.0, -5.0).unwrap();
        assert!((v + 5.5).abs() < 1e-12);
        assert_eq!(d.evaluate(&PRE, 0.0, 0.0, 0.0).unwrap(), 0.0);
        let c = Driver::lambda_linear(1.0, 0.0, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(c.evaluate(&PRE, 3.0, -2.0, 9.0).unwrap(), 1.0);
    }

    #[test]
    fn non_finite_rejected() {
        let d = Driver::zero();
        assert!(d.evaluate(&PRE, f64::NAN, 0.0, 0.0).is_err());
        assert!(d.evaluate(&PRE, 0.0, f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn admissibility_reports() {
        let d = Driver::perfect_market(0.05, 0.2, 0.5, 1.0).unwrap();
        assert_eq!(d.lambda_constant(), 0.5);
        let r = d
            .verify_admissibility(2000, 1, &SamplingBox::symmetric(1.0, 1.0, 100.0))
            .unwrap();
        assert_eq!(r.violations, 0);
        let z = Driver::zero()
            .verify_admissibility(50, 2, &SamplingBox::symmetric(1.0, 1.0, 10.0))
            .unwrap();
        assert_eq!(z.worst_ratio, 0.0);
        let q = Driver::custom(|_, _, _, k, _| k * k, 1.0, "k^2").unwrap();
        let r = q
            .verify_admissibility(500, 3, &SamplingBox::symmetric(1.0, 1.0, 1e6))
            .unwrap();
        assert!(r.violations > 0);
        assert!(r.worst_case.is_some());
    }

    #[test]
    fn large_investor_reductions() {
        let pm = Driver::perfect_market(0.03, 0.4, 0.2, 1.0).unwrap();
        let li0 = large_investor_driver(0.03, 0.4, 0.2, 0.3, 0.5, |_, _, _, _| 0.0, 0.0, 1.0).unwrap();
        let lic = large_investor_driver(0.03, 0.4, 0.2, 0.3, 0.5, |_, _, _, _| 0.7, 0.7, 1.0).unwrap();
        for (y, z, k) in [(1.0, 2.0, -3.0), (0.0, -1.0, 0.5)] {
            let p = pm.value(&PRE, y, z, k);
            assert_eq!(li0.value(&PRE, y, z, k), p);
            assert!((lic.value(&PRE, y, z, k) - p - 0.7 * k).abs() < 1e-14);
            assert_eq!(lic.value(&PRE, y, z, 0.0), pm.value(&PRE, y, z, 0.0));
        }
        assert!(large_investor_driver(0.0, 0.0, 0.0, 0.0, 1.0, |_, _, _, _| 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn expression_driver_and_stop() {
        let d = Driver::from_expr("-0.1*y + 0.5*abs(z) + lambda*max(k, 0)", 0.5).unwrap();
        assert!((d.value(&PRE, 1.0, -2.0, 3.0) - (-0.1 + 1.0 + 3.0)).abs() < 1e-14);
        let s = Driver::lambda_linear(1.0, 0.0, 0.0, 0.0, 0.0).unwrap().stopped_at(0.5);
        assert_eq!(s.value(&PRE, 0.0, 0.0, 0.0), 1.0);
        let late = DriverContext { t: 0.5, ..PRE };
        assert_eq!(s.value(&late, 0.0, 0.0, 0.0), 0.0);
        assert_eq!(s.linear_at(0.6, false), Some(LinearCoefficients::default()));
    }

    #[test]
    fn theta2_helper() {
        assert_eq!(theta2_from_drifts(0.1, 0.2, 0.5, 0.02, 0.0), 0.0);
        assert!((theta2_from_drifts(0.1, 0.2, 0.5, 0.02, 2.0) - (-(0.1 - 0.1 - 0.02) / 2.0)).abs() < 1e-15);
    }

    fn linear_driver(phi: f64, delta: f64, beta: f64, gamma: f64) -> Driver {
        Driver::lambda_linear(phi, delta, beta, gamma, 4.0).unwrap()
    }

    proptest! {
        #[test]
        fn k_inert_after_default(y in -50.0..50.0f64, z in -50.0..50.0f64, k1 in -50.0..50.0f64, k2 in -50.0..50.0f64) {
            let post = DriverContext { t: 0.5, lambda: 0.0, defaulted: true };
            let drivers = [
                Driver::perfect_market(0.05, 0.2, 0.3, 1.0).unwrap(),
                linear_driver(0.3, -0.2, 0.4, 1.5),
                large_investor_driver(0.0, 0.1, 0.2, 0.4, 0.3, |_, _, p1, _| 0.5 * p1.tanh(), 0.5, 1.0).unwrap(),
                Driver::from_expr("y*z + k^2", 1.0).unwrap(),
            ];
            for d in &drivers {
                prop_assert_eq!(d.value(&post, y, z, k1), d.value(&post, y, z, k2));
            }
        }

        #[test]
        fn lambda_linear_superposition(
            c in prop::array::uniform4(-2.0..2.0f64),
            a in prop::array::uniform3(-10.0..10.0f64),
            b in prop::array::uniform3(-10.0..10.0f64),
            lambda in 0.01..3.0f64,
        ) {
            let d = linear_driver(c[0], c[1], c[2], c[3]);
            let ctx = DriverContext { t: 0.2, lambda, defaulted: false };
            let base = d.value(&ctx, 0.0, 0.0, 0.0);
            let h = |x: [f64; 3]| d.value(&ctx, x[0], x[1], x[2]) - base;
            let sum = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
            prop_assert!((h(sum) - h(a) - h(b)).abs() < 1e-12);
        }

        #[test]
        fn perfect_market_is_lambda_linear(
            r in -0.1..0.1f64, th1 in -1.0..1.0f64, th2 in -1.0..1.0f64,
            y in -10.0..10.0f64, z in -10.0..10.0f64, k in -10.0..10.0f64, lambda in 0.0..3.0f64,
        ) {
            let pm = Driver::perfect_market(r, th1, th2, 3.0).unwrap();
            let ll = linear_driver(0.0, -r, -th1, -th2);
            let ctx = DriverContext { t: 0.1, lambda, defaulted: false };
            prop_assert!((pm.value(&ctx, y, z, k) - ll.value(&ctx, y, z, k)).abs() < 1e-12);
        }
    }
}
