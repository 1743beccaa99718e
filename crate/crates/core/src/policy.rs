//! Softmax sharing policy over an agent's ranked partitions and the
//! score-function (REINFORCE) gradient machinery around it.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use rand::Rng;

use crate::math::{self, Matrix};
use crate::{Error, Result};

/// Logits of an agent's sharing policy, one per strategy.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct PolicyParams(pub Vec<f64>);

impl PolicyParams {
    /// Uniform policy over `n_strategies` strategies.
    pub fn uniform(n_strategies: usize) -> Self {
        PolicyParams(vec![0.0; n_strategies])
    }

    pub fn n_strategies(&self) -> usize {
        self.0.len()
    }
}

impl Deref for PolicyParams {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub fn policy_probs(nu: &[f64]) -> Vec<f64> {
    math::softmax(nu)
}

/// Draws a 0-based strategy index by inverse-CDF sampling.
pub fn policy_sample<R: Rng + ?Sized>(nu: &[f64], rng: &mut R) -> usize {
    let probs = policy_probs(nu);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the last partial sum
    probs.len() - 1
}

fn check_strategy(s: usize, n: usize) -> Result<()> {
    if s < n {
        Ok(())
    } else {
        Err(Error::StrategyOutOfRange {
            index: s,
            n_strategies: n,
        })
    }
}

/// `∇_ν log π(s) = 1_s - π`
pub fn policy_log_grad(nu: &[f64], s: usize) -> Result<Vec<f64>> {
    check_strategy(s, nu.len())?;
    let mut g: Vec<f64> = policy_probs(nu).into_iter().map(|p| -p).collect();
    g[s] += 1.0;
    Ok(g)
}

/// Which closed form to use for the Hessian of `log π(s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogHessianForm {
    /// `-diag(π) + π πᵀ`, the true Hessian of log-softmax.
    Exact,
    /// `-diag(π) - π πᵀ`, the sign variant printed alongside the bounded-Hessian
    /// assumption. Kept so the diagnostics can show it disagrees with finite
    /// differences.
    PrintedVariant,
}

/// Hessian of `log π(s)` in `ν`. It does not depend on `s`.
pub fn policy_log_hessian(nu: &[f64], s: usize) -> Result<Matrix> {
    policy_log_hessian_form(nu, s, LogHessianForm::Exact)
}

pub fn policy_log_hessian_form(nu: &[f64], s: usize, form: LogHessianForm) -> Result<Matrix> {
    check_strategy(s, nu.len())?;
    let pi = policy_probs(nu);
    let sign = match form {
        LogHessianForm::Exact => 1.0,
        LogHessianForm::PrintedVariant => -1.0,
    };
    let mut h = Matrix::outer(&pi, sign);
    for (i, p) in pi.iter().enumerate() {
        h.set(i, i, h.get(i, i) - p);
    }
    Ok(h)
}

/// Single-sample policy-gradient estimate `m · ∇_ν log π(s)`.
pub fn grad_estimate(eval_value: f64, nu: &[f64], s: usize) -> Result<Vec<f64>> {
    Ok(policy_log_grad(nu, s)?
        .into_iter()
        .map(|g| eval_value * g)
        .collect())
}

/// Descent step `ν - b ∇̂G`.
pub fn policy_update(nu: &PolicyParams, estimator: &[f64], step: f64) -> Result<PolicyParams> {
    math::check_dim(nu.len(), estimator.len())?;
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::OutOfRange {
            what: "policy step",
            value: step,
            range: "(0, 1]",
        });
    }
    Ok(PolicyParams(
        nu.iter()
            .zip(estimator)
            .map(|(v, g)| v - step * g)
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Entity, Purpose};

    #[test]
    fn probs_examples() {
        let p = policy_probs(&[0.0, 0.0, 0.0]);
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = policy_probs(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        let shifted = policy_probs(&[2f64.ln() + 1000.0, 1000.0]);
        assert!((shifted[0] - p[0]).abs() < 1e-12);
        assert!((shifted[1] - p[1]).abs() < 1e-12);
    }

    #[test]
    fn log_grad_examples() {
        // π = (0.25, 0.75) when ν = (0, ln 3); strategy 1 is index 0
        let nu = [0.0, 3f64.ln()];
        let g = policy_log_grad(&nu, 0).unwrap();
        assert!((g[0] - 0.75).abs() < 1e-15);
        assert!((g[1] + 0.75).abs() < 1e-15);
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
        assert!(policy_log_grad(&nu, 2).is_err());
    }

    #[test]
    fn log_hessian_uniform_pair() {
        let h = policy_log_hessian(&[0.0, 0.0], 1).unwrap();
        assert_eq!(h.get(0, 0), -0.25);
        assert_eq!(h.get(0, 1), 0.25);
        assert_eq!(h.get(1, 0), 0.25);
        assert_eq!(h.get(1, 1), -0.25);
        let printed =
            policy_log_hessian_form(&[0.0, 0.0], 1, LogHessianForm::PrintedVariant).unwrap();
        assert_eq!(printed.get(0, 1), -0.25);
        assert_eq!(printed.get(0, 0), -0.75);
    }

    #[test]
    fn estimator_examples() {
        assert_eq!(grad_estimate(0.0, &[0.3, -0.1], 1).unwrap(), vec![0.0, 0.0]);
        // s = 2 (index 1), uniform, m = 1
        assert_eq!(grad_estimate(1.0, &[0.0, 0.0], 1).unwrap(), vec![-0.5, 0.5]);
    }

    #[test]
    fn update_examples() {
        let nu = PolicyParams(vec![0.4, -0.2]);
        assert_eq!(policy_update(&nu, &[0.0, 0.0], 0.3).unwrap(), nu);
        let twice = policy_update(
            &policy_update(&nu, &[0.0, 0.0], 0.5).unwrap(),
            &[0.0, 0.0],
            0.5,
        );
        assert_eq!(twice.unwrap(), nu);
        let step = 1.0 / math::sqrt(4.0);
        assert_eq!(step, 0.5);
        let moved = policy_update(&nu, &[1.0, -1.0], step).unwrap();
        assert!((moved.0[0] + 0.1).abs() < 1e-15 && (moved.0[1] - 0.3).abs() < 1e-15);
        assert!(policy_update(&nu, &[1.0, 1.0], 1.5).is_err());
        assert!(policy_update(&nu, &[1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn degenerate_policy_almost_always_picks_first() {
        let mut rng = stream(3, Entity::Agent(0), Purpose::Policy);
        let hits = (0..10_000)
            .filter(|_| policy_sample(&[50.0, -50.0], &mut rng) == 0)
            .count();
        assert!(hits as f64 / 10_000.0 > 0.999);
    }

    #[test]
    fn uniform_policy_frequencies_within_three_sigma() {
        let n = 4;
        let draws = 100_000;
        let mut rng = stream(11, Entity::Agent(1), Purpose::Policy);
        let mut counts = vec![0usize; n];
        for _ in 0..draws {
            counts[policy_sample(&[0.0; 4], &mut rng)] += 1;
        }
        let p = 1.0 / n as f64;
        let sigma = math::sqrt(p * (1.0 - p) / draws as f64);
        for c in counts {
            assert!((c as f64 / draws as f64 - p).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let a = policy_sample(
            &[0.1, 0.2, 0.3],
            &mut stream(5, Entity::Agent(0), Purpose::Policy),
        );
        let b = policy_sample(
            &[0.1, 0.2, 0.3],
            &mut stream(5, Entity::Agent(0), Purpose::Policy),
        );
        assert_eq!(a, b);
    }
}
