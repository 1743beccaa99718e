use alloc::format;

use crate::math;
use crate::{Error, Result};

/// Step-size rule. Every schedule used here is constant over a run of known
/// horizon `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum StepSchedule {
    Constant {
        value: f64,
    },
    /// `T^(-exponent)`
    HorizonPower {
        exponent: f64,
    },
}

impl StepSchedule {
    /// `1/√T`, the agent policy step.
    pub const INV_SQRT_HORIZON: StepSchedule = StepSchedule::HorizonPower { exponent: 0.5 };
    /// `T^(-3/5)`, the arbiter's fast inner step.
    pub const TWO_TIMESCALE_INNER: StepSchedule = StepSchedule::HorizonPower { exponent: 0.6 };
    /// `T^(-2/5)`, the arbiter's slow weight step.
    pub const TWO_TIMESCALE_OUTER: StepSchedule = StepSchedule::HorizonPower { exponent: 0.4 };

    pub fn step(&self, horizon: usize) -> f64 {
        match *self {
            StepSchedule::Constant { value } => value,
            StepSchedule::HorizonPower { exponent } => math::powf(horizon.max(1) as f64, -exponent),
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        match *self {
            StepSchedule::Constant { value } if !(value > 0.0 && value <= 1.0) => {
                Err(Error::config(
                    format!("{path}.value"),
                    format!("{value} is outside (0, 1]"),
                ))
            }
            StepSchedule::HorizonPower { exponent }
                if !(exponent > 0.0 && exponent.is_finite()) =>
            {
                Err(Error::config(
                    format!("{path}.exponent"),
                    format!("{exponent} must be positive"),
                ))
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        assert_eq!(StepSchedule::INV_SQRT_HORIZON.step(4), 0.5);
        assert!((StepSchedule::TWO_TIMESCALE_INNER.step(32) - 0.125).abs() < 1e-15);
        assert!((StepSchedule::TWO_TIMESCALE_OUTER.step(32) - 0.25).abs() < 1e-15);
        assert_eq!(StepSchedule::Constant { value: 0.2 }.step(1000), 0.2);
    }

    #[test]
    fn validation() {
        assert!(StepSchedule::Constant { value: 0.0 }.validate("a").is_err());
        assert!(StepSchedule::Constant { value: 1.5 }.validate("a").is_err());
        assert!(StepSchedule::HorizonPower { exponent: -1.0 }
            .validate("a")
            .is_err());
        assert!(StepSchedule::TWO_TIMESCALE_INNER.validate("a").is_ok());
    }
}
