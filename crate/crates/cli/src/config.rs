//! Run configuration: one JSON object per block, validated into engine types.

use std::fmt;

use bsde_core::drivers::Coefficient;
use bsde_core::expr::Expr;
use bsde_core::pricing::MarketModel;
use bsde_core::scenario::{IntensityModel, TimeGrid};
use bsde_core::solver::{Asset, LsmcOptions, Scheme};
use bsde_core::{BsdeError, Claim, DividendProcess, Driver};
use serde::Deserialize;

/// A validation failure tied to the config field that caused it.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }

    fn engine(field: &str, e: BsdeError) -> Self {
        Self::new(field, e.to_string())
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

pub type FieldResult<T> = std::result::Result<T, FieldError>;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: Option<GridBlock>,
    pub intensity: Option<IntensityBlock>,
    pub driver: Option<DriverBlock>,
    pub claim: Option<ClaimBlock>,
    pub dividends: Option<DividendBlock>,
    pub market: Option<MarketBlock>,
    #[serde(default)]
    pub method: MethodName,
    #[serde(default)]
    pub lattice: LatticeKind,
    pub paths: Option<usize>,
    pub seed: Option<SeedValue>,
    pub output: Option<String>,
    pub threads: Option<usize>,
    pub lsmc: Option<LsmcBlock>,
    pub suite: Option<SuiteBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    #[default]
    Tree,
    Lsmc,
    Representation,
}

impl MethodName {
    pub fn name(&self) -> &'static str {
        match self {
            MethodName::Tree => "tree",
            MethodName::Lsmc => "lsmc",
            MethodName::Representation => "representation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeKind {
    /// Four children per pre-default node.
    #[default]
    Product,
    /// Three children per pre-default node; exact replication.
    Complete,
    /// Recombining in W; scales to large step counts.
    Recombining,
}

/// Decimal integer or a `0x` hexadecimal string.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SeedValue {
    Number(u64),
    Text(String),
}

pub fn parse_seed(s: &str) -> Result<u64, String> {
    let t = s.trim();
    let parsed = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => t.parse::<u64>(),
    };
    parsed.map_err(|_| format!("'{s}' is not a decimal or 0x-hexadecimal u64"))
}

impl SeedValue {
    pub fn value(&self) -> FieldResult<u64> {
        match self {
            SeedValue::Number(v) => Ok(*v),
            SeedValue::Text(s) => parse_seed(s).map_err(|m| FieldError::new("seed", m)),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntensityBlock {
    Constant {
        rate: f64,
    },
    /// Expression over `t`.
    Deterministic {
        expr: String,
        max: f64,
    },
    /// Expression over `t` and the Brownian level `w`.
    StateDependent {
        expr: String,
        max: f64,
    },
}

/// A number, or an expression over `t` and `n` with a declared bound.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Number(f64),
    Expr { expr: String, bound: f64 },
}

impl Default for Scalar {
    fn default() -> Self {
        Scalar::Number(0.0)
    }
}

impl Scalar {
    fn coefficient(&self, field: &str) -> FieldResult<Coefficient> {
        match self {
            Scalar::Number(v) if v.is_finite() => Ok(Coefficient::Constant(*v)),
            Scalar::Number(v) => Err(FieldError::new(field, format!("{v} is not finite"))),
            Scalar::Expr { expr, bound } => {
                Coefficient::from_expr(expr, *bound).map_err(|e| FieldError::engine(field, e))
            }
        }
    }

    fn constant(&self) -> Option<f64> {
        match self {
            Scalar::Number(v) => Some(*v),
            Scalar::Expr { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverBlock {
    Zero,
    LambdaLinear {
        #[serde(default)]
        phi: Scalar,
        #[serde(default)]
        delta: Scalar,
        #[serde(default)]
        beta: Scalar,
        #[serde(default)]
        gamma: Scalar,
    },
    /// Built from the market block.
    PerfectMarket,
    /// Feedback `impact(t, y, phi1, phi2)` with `|impact| <= impact_bound`.
    LargeInvestor {
        impact: String,
        impact_bound: f64,
    },
    /// Expression over `t, y, z, k, lambda`.
    Custom {
        expr: String,
        lambda_constant: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClaimBlock {
    Constant {
        value: f64,
    },
    Call {
        asset: AssetName,
        strike: f64,
    },
    Put {
        asset: AssetName,
        strike: f64,
    },
    DefaultIndicator,
    /// Expression over `t, w, n, s0, s1, s2`.
    Expression {
        expr: String,
    },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetName {
    S1,
    S2,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DividendBlock {
    /// Constant rate or expression over `t`.
    pub rate: Option<RateValue>,
    /// `[time, size]` pairs.
    #[serde(default)]
    pub jumps: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum RateValue {
    Number(f64),
    Expr(String),
}

/// Either drifts `(mu1, mu2)` or risk premia `(theta1, theta2)`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketBlock {
    pub r: Scalar,
    pub sigma1: Scalar,
    pub sigma2: Scalar,
    pub mu1: Option<Scalar>,
    pub mu2: Option<Scalar>,
    pub theta1: Option<Scalar>,
    pub theta2: Option<Scalar>,
    #[serde(default = "one")]
    pub s1_0: f64,
    #[serde(default = "one")]
    pub s2_0: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LsmcBlock {
    #[serde(default = "three")]
    pub degree: usize,
    #[serde(default)]
    pub scheme: SchemeName,
    #[serde(default = "ridge")]
    pub ridge: f64,
}

fn three() -> usize {
    3
}

fn ridge() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    #[default]
    Explicit,
    Implicit,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteBlock {
    #[serde(default = "hundred")]
    pub instances: usize,
    #[serde(default = "eight")]
    pub steps: usize,
    /// Constant k-slope candidate; defaults to `-theta2` for the
    /// perfect-market driver and the difference quotient otherwise.
    pub gamma_candidate: Option<f64>,
}

fn hundred() -> usize {
    100
}

fn eight() -> usize {
    8
}

fn required<'a, T>(block: &'a Option<T>, field: &str, why: &str) -> FieldResult<&'a T> {
    block
        .as_ref()
        .ok_or_else(|| FieldError::new(field, format!("missing block (required {why})")))
}

impl RunConfig {
    pub fn grid(&self, why: &str) -> FieldResult<TimeGrid> {
        let g = required(&self.grid, "grid", why)?;
        TimeGrid::uniform(g.horizon, g.steps).map_err(|e| FieldError::engine("grid", e))
    }

    pub fn intensity(&self, why: &str) -> FieldResult<IntensityModel> {
        match required(&self.intensity, "intensity", why)? {
            IntensityBlock::Constant { rate } => {
                IntensityModel::constant(*rate).map_err(|e| FieldError::engine("intensity.rate", e))
            }
            IntensityBlock::Deterministic { expr, max } => {
                let e = Expr::parse(expr, &["t"]).map_err(|e| FieldError::engine("intensity.expr", e))?;
                IntensityModel::deterministic(move |t| e.eval(&[t]), *max)
                    .map_err(|e| FieldError::engine("intensity.max", e))
            }
            IntensityBlock::StateDependent { expr, max } => {
                let e = Expr::parse(expr, &["t", "w"]).map_err(|e| FieldError::engine("intensity.expr", e))?;
                IntensityModel::state_dependent(move |t, w| e.eval(&[t, w]), *max)
                    .map_err(|e| FieldError::engine("intensity.max", e))
            }
        }
    }

    /// `None` when the config has no seed.
    pub fn seed(&self, flag: Option<u64>) -> FieldResult<Option<u64>> {
        match (flag, &self.seed) {
            (Some(s), _) => Ok(Some(s)),
            (None, Some(v)) => v.value().map(Some),
            (None, None) => Ok(None),
        }
    }

    pub fn require_seed(&self, flag: Option<u64>, why: &str) -> FieldResult<u64> {
        self.seed(flag)?
            .ok_or_else(|| FieldError::new("seed", format!("missing (mandatory {why})")))
    }

    pub fn paths(&self, why: &str) -> FieldResult<usize> {
        match self.paths {
            Some(0) => Err(FieldError::new("paths", "must be >= 1")),
            Some(p) => Ok(p),
            None => Err(FieldError::new("paths", format!("missing (required {why})"))),
        }
    }

    pub fn market(&self, why: &str) -> FieldResult<MarketModel> {
        let m = required(&self.market, "market", why)?;
        let grid = self.grid(why)?;
        let intensity = self.intensity(why)?;
        let r = m.r.coefficient("market.r")?;
        let sigma1 = m.sigma1.coefficient("market.sigma1")?;
        let sigma2 = m.sigma2.coefficient("market.sigma2")?;
        let initial = (m.s1_0, m.s2_0);
        let err = |e| FieldError::engine("market", e);
        match (&m.mu1, &m.mu2, &m.theta1, &m.theta2) {
            (Some(mu1), Some(mu2), None, None) => MarketModel::new(
                r,
                mu1.coefficient("market.mu1")?,
                sigma1,
                mu2.coefficient("market.mu2")?,
                sigma2,
                intensity,
                grid.horizon(),
                initial,
            )
            .map_err(err),
            (None, None, Some(th1), Some(th2)) => {
                let premia = [&m.r, &m.sigma1, &m.sigma2, th1, th2].map(|s| s.constant());
                match premia {
                    [Some(r), Some(s1), Some(s2), Some(t1), Some(t2)] => {
                        MarketModel::from_risk_premia(r, s1, s2, t1, t2, intensity, grid.horizon(), initial)
                            .map_err(err)
                    }
                    _ => Err(FieldError::new(
                        "market",
                        "risk premia (theta1, theta2) need constant r, sigma1, sigma2, theta1, theta2",
                    )),
                }
            }
            _ => Err(FieldError::new(
                "market",
                "give either mu1 and mu2, or theta1 and theta2",
            )),
        }
    }

    /// The driver block, or the perfect-market driver when the block is
    /// absent and a market is given.
    pub fn driver(&self, market: Option<&MarketModel>, why: &str) -> FieldResult<Driver> {
        let block = match (&self.driver, market) {
            (Some(b), _) => b.clone(),
            (None, Some(_)) => DriverBlock::PerfectMarket,
            (None, None) => return Err(FieldError::new("driver", format!("missing block (required {why})"))),
        };
        let lambda_max = match self.intensity {
            Some(_) => self.intensity(why)?.lambda_max(),
            None => 0.0,
        };
        let need_market =
            |kind: &str| market.ok_or_else(|| FieldError::new("driver.kind", format!("'{kind}' needs a market block")));
        match block {
            DriverBlock::Zero => Ok(Driver::zero()),
            DriverBlock::LambdaLinear {
                phi,
                delta,
                beta,
                gamma,
            } => Driver::lambda_linear(
                phi.coefficient("driver.phi")?,
                delta.coefficient("driver.delta")?,
                beta.coefficient("driver.beta")?,
                gamma.coefficient("driver.gamma")?,
                lambda_max,
            )
            .map_err(|e| FieldError::engine("driver", e)),
            DriverBlock::PerfectMarket => need_market("perfect_market")?
                .perfect_market_driver()
                .map_err(|e| FieldError::engine("driver", e)),
            DriverBlock::LargeInvestor { impact, impact_bound } => {
                let e = Expr::parse(&impact, &["t", "y", "phi1", "phi2"])
                    .map_err(|e| FieldError::engine("driver.impact", e))?;
                need_market("large_investor")?
                    .large_investor_driver(move |t, y, p1, p2| e.eval(&[t, y, p1, p2]), impact_bound)
                    .map_err(|e| FieldError::engine("driver", e))
            }
            DriverBlock::Custom { expr, lambda_constant } => {
                Driver::from_expr(&expr, lambda_constant).map_err(|e| FieldError::engine("driver.expr", e))
            }
        }
    }

    /// Constant `gamma` of a lambda-linear driver block, if it has one.
    pub fn constant_gamma(&self) -> Option<f64> {
        match &self.driver {
            Some(DriverBlock::LambdaLinear {
                phi,
                delta,
                beta,
                gamma,
            }) => {
                let zero = |s: &Scalar| s.constant() == Some(0.0);
                (zero(phi) && zero(delta) && zero(beta))
                    .then_some(())
                    .and(gamma.constant())
            }
            _ => None,
        }
    }

    pub fn is_perfect_market(&self) -> bool {
        matches!(self.driver, None | Some(DriverBlock::PerfectMarket)) && self.market.is_some()
    }

    pub fn claim(&self, why: &str) -> FieldResult<Claim> {
        let asset = |a: AssetName| match a {
            AssetName::S1 => Asset::S1,
            AssetName::S2 => Asset::S2,
        };
        Ok(match required(&self.claim, "claim", why)? {
            ClaimBlock::Constant { value } => Claim::Constant(*value),
            ClaimBlock::Call { asset: a, strike } => Claim::Call {
                asset: asset(*a),
                strike: *strike,
            },
            ClaimBlock::Put { asset: a, strike } => Claim::Put {
                asset: asset(*a),
                strike: *strike,
            },
            ClaimBlock::DefaultIndicator => Claim::DefaultIndicator,
            ClaimBlock::Expression { expr } => {
                Claim::expression(expr).map_err(|e| FieldError::engine("claim.expr", e))?
            }
        })
    }

    pub fn dividends(&self) -> FieldResult<DividendProcess> {
        let Some(b) = &self.dividends else {
            return Ok(DividendProcess::none());
        };
        let mut d = match &b.rate {
            None => DividendProcess::none(),
            Some(RateValue::Number(v)) => DividendProcess::none().with_constant_rate(*v),
            Some(RateValue::Expr(s)) => DividendProcess::none()
                .with_rate_expr(s)
                .map_err(|e| FieldError::engine("dividends.rate", e))?,
        };
        for [t, size] in &b.jumps {
            d = d.with_jump(*t, *size);
        }
        if let Some(g) = &self.grid {
            d.validate(g.horizon).map_err(|e| FieldError::engine("dividends", e))?;
        }
        Ok(d)
    }

    pub fn lsmc_options(&self) -> FieldResult<LsmcOptions> {
        let mut o = LsmcOptions::default();
        if let Some(b) = &self.lsmc {
            if b.degree > 3 {
                return Err(FieldError::new("lsmc.degree", "must be at most 3"));
            }
            o.degree = b.degree;
            o.ridge = b.ridge;
            o.scheme = match b.scheme {
                SchemeName::Explicit => Scheme::Explicit,
                SchemeName::Implicit => Scheme::Implicit,
            };
        }
        Ok(o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> RunConfig {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn seeds_in_both_notations() {
        assert_eq!(parse_seed("42"), Ok(42));
        assert_eq!(parse_seed("0x2A"), Ok(42));
        assert!(parse_seed("x").is_err());
        let c = parse(r#"{"seed": "0xff"}"#);
        assert_eq!(c.seed(None).unwrap(), Some(255));
        assert_eq!(c.seed(Some(1)).unwrap(), Some(1));
    }

    #[test]
    fn missing_blocks_name_their_field() {
        let c = parse("{}");
        assert_eq!(c.grid("by solve").unwrap_err().field, "grid");
        assert_eq!(c.require_seed(None, "for lsmc").unwrap_err().field, "seed");
        assert_eq!(c.driver(None, "by solve").unwrap_err().field, "driver");
    }

    #[test]
    fn counterexample_gamma_is_read() {
        let c = parse(r#"{"driver": {"kind": "lambda_linear", "gamma": -2}}"#);
        assert_eq!(c.constant_gamma(), Some(-2.0));
        let c = parse(r#"{"driver": {"kind": "lambda_linear", "beta": 0.1, "gamma": -2}}"#);
        assert_eq!(c.constant_gamma(), None);
    }

    #[test]
    fn premia_market_builds() {
        let c = parse(
            r#"{"grid": {"horizon": 1, "steps": 4}, "intensity": {"kind": "constant", "rate": 1},
                "market": {"r": 0.03, "sigma1": 0.2, "sigma2": 0.3, "theta1": 0.3, "theta2": 0.6}}"#,
        );
        let m = c.market("").unwrap();
        assert!((m.theta2(0.5, false) - 0.6).abs() < 1e-12);
    }
}
