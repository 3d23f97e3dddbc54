use std::fmt;
use std::sync::Arc;

use crate::error::{BsdeError, Result};
use crate::expr::Expr;
use crate::scenario::{ScenarioPath, ScenarioSet, TerminalState};

/// Underlying of a vanilla claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Asset {
    S1,
    S2,
}

type PayoffFn = Arc<dyn Fn(&TerminalState) -> f64 + Send + Sync>;

/// Terminal payoff `xi` written on `(T, W_T, N_T, S0_T, S1_T, S2_T)`.
#[derive(Clone)]
pub enum Claim {
    Constant(f64),
    Call {
        asset: Asset,
        strike: f64,
    },
    Put {
        asset: Asset,
        strike: f64,
    },
    /// `xi = N_T`.
    DefaultIndicator,
    /// Expression over `t, w, n, s0, s1, s2`.
    Expression(Expr),
    Function(PayoffFn),
}

impl fmt::Debug for Claim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Claim::Constant(c) => write!(f, "Constant({c})"),
            Claim::Call { asset, strike } => write!(f, "Call({asset:?}, {strike})"),
            Claim::Put { asset, strike } => write!(f, "Put({asset:?}, {strike})"),
            Claim::DefaultIndicator => write!(f, "DefaultIndicator"),
            Claim::Expression(e) => write!(f, "Expression({})", e.source()),
            Claim::Function(_) => write!(f, "Function"),
        }
    }
}

pub const CLAIM_VARIABLES: [&str; 6] = ["t", "w", "n", "s0", "s1", "s2"];

impl Claim {
    pub fn expression(source: &str) -> Result<Self> {
        Ok(Claim::Expression(Expr::parse(source, &CLAIM_VARIABLES)?))
    }

    pub fn function(f: impl Fn(&TerminalState) -> f64 + Send + Sync + 'static) -> Self {
        Claim::Function(Arc::new(f))
    }

    /// True when the payoff reads asset prices.
    pub fn needs_assets(&self) -> bool {
        match self {
            Claim::Call { .. } | Claim::Put { .. } => true,
            Claim::Expression(e) => e.uses_any(&["s0", "s1", "s2"]),
            _ => false,
        }
    }

    pub fn payoff(&self, s: &TerminalState) -> Result<f64> {
        let price = |a: &Asset| {
            let v = match a {
                Asset::S1 => s.s1,
                Asset::S2 => s.s2,
            };
            if v.is_nan() {
                Err(BsdeError::Claim(format!(
                    "claim on {a:?} requires a market attached to the scenario"
                )))
            } else {
                Ok(v)
            }
        };
        let v = match self {
            Claim::Constant(c) => *c,
            Claim::Call { asset, strike } => (price(asset)? - strike).max(0.0),
            Claim::Put { asset, strike } => (strike - price(asset)?).max(0.0),
            Claim::DefaultIndicator => s.n,
            Claim::Expression(e) => {
                if e.uses_any(&["s0", "s1", "s2"]) && s.s0.is_nan() {
                    return Err(BsdeError::Claim(
                        "claim expression uses asset prices but no market is attached".into(),
                    ));
                }
                e.eval(&[s.t, s.w, s.n, s.s0, s.s1, s.s2])
            }
            Claim::Function(f) => f(s),
        };
        if !v.is_finite() {
            return Err(BsdeError::Claim(format!("non-finite payoff {v}")));
        }
        Ok(v)
    }
}

/// Terminal state of a Monte Carlo path (asset prices NaN without a market).
pub fn path_terminal_state(set: &ScenarioSet, path: &ScenarioPath<'_>) -> TerminalState {
    let [s0, s1, s2] = set.terminal_assets().map(|a| a[path.index()]).unwrap_or([f64::NAN; 3]);
    TerminalState {
        t: set.grid().horizon(),
        w: path.terminal_w(),
        n: path.terminal_n(),
        s0,
        s1,
        s2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(s1: f64) -> TerminalState {
        TerminalState {
            t: 1.0,
            w: 0.3,
            n: 1.0,
            s0: 1.0,
            s1,
            s2: 0.0,
        }
    }

    #[test]
    fn payoffs() {
        let s = state(1.2);
        assert_eq!(Claim::DefaultIndicator.payoff(&s).unwrap(), 1.0);
        assert!(
            (Claim::Call {
                asset: Asset::S1,
                strike: 1.0
            }
            .payoff(&s)
            .unwrap()
                - 0.2)
                .abs()
                < 1e-15
        );
        assert_eq!(
            Claim::Put {
                asset: Asset::S1,
                strike: 1.0
            }
            .payoff(&s)
            .unwrap(),
            0.0
        );
        let e = Claim::expression("max(s1 - 1, 0) + n*w").unwrap();
        assert!((e.payoff(&s).unwrap() - 0.5).abs() < 1e-15);
        assert!(e.needs_assets());
    }

    #[test]
    fn missing_market_is_an_error() {
        let s = state(f64::NAN);
        let s = TerminalState { s0: f64::NAN, ..s };
        assert!(Claim::Call {
            asset: Asset::S1,
            strike: 1.0
        }
        .payoff(&s)
        .is_err());
        assert!(Claim::expression("s1").unwrap().payoff(&s).is_err());
        assert_eq!(Claim::expression("n + w").unwrap().payoff(&s).unwrap(), 1.3);
    }
}
