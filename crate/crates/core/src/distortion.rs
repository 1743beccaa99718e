//! Distortion functions: non-decreasing maps `[0,1] → [0,1]` with fixed
//! endpoints, used to reshape agent weights before they set noise radii.

use alloc::format;

use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DistortionKind {
    Identity,
    Quadratic,
    Exponential,
    SquareRoot,
    Logarithmic,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 5] = [
        DistortionKind::Identity,
        DistortionKind::Quadratic,
        DistortionKind::Exponential,
        DistortionKind::SquareRoot,
        DistortionKind::Logarithmic,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DistortionFn {
    pub kind: DistortionKind,
    /// Shape parameter; ignored by `Identity`.
    pub lambda: f64,
}

impl Default for DistortionFn {
    fn default() -> Self {
        DistortionFn::identity()
    }
}

impl DistortionFn {
    pub fn identity() -> Self {
        DistortionFn {
            kind: DistortionKind::Identity,
            lambda: 0.0,
        }
    }

    pub fn new(kind: DistortionKind, lambda: f64) -> Result<Self> {
        let g = DistortionFn { kind, lambda };
        g.validate("distortion")?;
        Ok(g)
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let lambda = self.lambda;
        let ok = match self.kind {
            DistortionKind::Identity => true,
            DistortionKind::Quadratic => (0.0..=1.0).contains(&lambda),
            _ => lambda > 0.0 && lambda.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            let range = if self.kind == DistortionKind::Quadratic {
                "[0, 1]"
            } else {
                "(0, inf)"
            };
            Err(Error::config(
                format!("{path}.lambda"),
                format!("{lambda} is outside {range} for {:?}", self.kind),
            ))
        }
    }

    /// `g(u)`; errors for `u` outside `[0, 1]`.
    pub fn eval(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::OutOfRange {
                what: "distortion argument",
                value: u,
                range: "[0, 1]",
            });
        }
        let l = self.lambda;
        let g = match self.kind {
            DistortionKind::Identity => u,
            DistortionKind::Quadratic => (1.0 + l) * u - l * u * u,
            DistortionKind::Exponential => math::exp_m1(-l * u) / math::exp_m1(-l),
            // √(1+a) - 1 = a / (√(1+a) + 1), stable for small a
            DistortionKind::SquareRoot => {
                let rise = |a: f64| a / (math::sqrt(1.0 + a) + 1.0);
                rise(l * u) / rise(l)
            }
            DistortionKind::Logarithmic => math::ln_1p(l * u) / math::ln_1p(l),
        };
        Ok(g.clamp(0.0, 1.0))
    }
}

/// Free-function form of [`DistortionFn::eval`].
pub fn distortion_eval(g: &DistortionFn, u: f64) -> Result<f64> {
    g.eval(u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_at_half() {
        let g = DistortionFn::new(DistortionKind::Quadratic, 1.0).unwrap();
        assert!((g.eval(0.5).unwrap() - 0.75).abs() < 1e-15);
        assert!((g.eval(0.7).unwrap() - 0.91).abs() < 1e-15);
        assert!((g.eval(0.3).unwrap() - 0.51).abs() < 1e-15);
    }

    #[test]
    fn identity_is_identity() {
        let g = DistortionFn::identity();
        for i in 0..=100 {
            let u = i as f64 / 100.0;
            assert_eq!(g.eval(u).unwrap(), u);
        }
    }

    #[test]
    fn endpoints_fixed_for_all_kinds() {
        for kind in DistortionKind::ALL {
            let lambda = if kind == DistortionKind::Quadratic {
                0.6
            } else {
                3.0
            };
            let g = DistortionFn::new(kind, lambda).unwrap();
            assert!(g.eval(0.0).unwrap().abs() < 1e-12);
            assert!((g.eval(1.0).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = DistortionFn::identity();
        assert!(g.eval(-0.1).is_err());
        assert!(g.eval(1.1).is_err());
        assert!(DistortionFn::new(DistortionKind::Quadratic, 1.5).is_err());
        assert!(DistortionFn::new(DistortionKind::Logarithmic, 0.0).is_err());
    }
}
