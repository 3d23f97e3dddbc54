use std::fmt;
use std::sync::Arc;

use crate::error::{BsdeError, Result};

type TimeRate = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type StateRate = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Pre-default default intensity `lambda(t, state)` with a declared upper bound.
///
/// The realized intensity of a path is forced to zero after its default.
/// State-dependent intensities see the Brownian level `W_t` as state.
#[derive(Clone)]
pub enum IntensityModel {
    Constant(f64),
    Deterministic { rate: TimeRate, max: f64 },
    StateDependent { rate: StateRate, max: f64 },
}

impl fmt::Debug for IntensityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntensityModel::Constant(v) => write!(f, "Constant({v})"),
            IntensityModel::Deterministic { max, .. } => write!(f, "Deterministic {{ max: {max} }}"),
            IntensityModel::StateDependent { max, .. } => {
                write!(f, "StateDependent {{ max: {max} }}")
            }
        }
    }
}

impl IntensityModel {
    pub fn constant(rate: f64) -> Result<Self> {
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(BsdeError::InvalidIntensity(format!(
                "constant intensity must be finite and >= 0, got {rate}"
            )));
        }
        Ok(IntensityModel::Constant(rate))
    }

    pub fn deterministic(rate: impl Fn(f64) -> f64 + Send + Sync + 'static, max: f64) -> Result<Self> {
        check_bound(max)?;
        Ok(IntensityModel::Deterministic {
            rate: Arc::new(rate),
            max,
        })
    }

    pub fn state_dependent(rate: impl Fn(f64, f64) -> f64 + Send + Sync + 'static, max: f64) -> Result<Self> {
        check_bound(max)?;
        Ok(IntensityModel::StateDependent {
            rate: Arc::new(rate),
            max,
        })
    }

    pub fn lambda_max(&self) -> f64 {
        match self {
            IntensityModel::Constant(v) => *v,
            IntensityModel::Deterministic { max, .. } | IntensityModel::StateDependent { max, .. } => *max,
        }
    }

    /// True unless the intensity depends on the simulated state.
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, IntensityModel::StateDependent { .. })
    }

    /// Pre-default intensity at time `t` and Brownian level `w`, checked against
    /// `[0, lambda_max]`.
    pub fn rate(&self, t: f64, w: f64) -> Result<f64> {
        let v = match self {
            IntensityModel::Constant(v) => *v,
            IntensityModel::Deterministic { rate, .. } => rate(t),
            IntensityModel::StateDependent { rate, .. } => rate(t, w),
        };
        let max = self.lambda_max();
        if !(v.is_finite() && v >= 0.0) || v > max * (1.0 + 1e-12) {
            return Err(BsdeError::InvalidIntensity(format!(
                "intensity {v} at t = {t} outside [0, {max}]"
            )));
        }
        Ok(v)
    }
}

fn check_bound(max: f64) -> Result<()> {
    if !(max.is_finite() && max >= 0.0) {
        return Err(BsdeError::InvalidIntensity(format!(
            "declared lambda_max must be finite and >= 0, got {max}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_are_enforced() {
        assert!(IntensityModel::constant(-0.1).is_err());
        let m = IntensityModel::deterministic(|t| 2.0 * t, 1.0).unwrap();
        assert_eq!(m.rate(0.25, 0.0).unwrap(), 0.5);
        assert!(m.rate(0.75, 0.0).is_err());
        let s = IntensityModel::state_dependent(|_, w: f64| w.abs().min(3.0), 3.0).unwrap();
        assert!(!s.is_deterministic());
        assert_eq!(s.rate(0.0, -2.0).unwrap(), 2.0);
    }
}
