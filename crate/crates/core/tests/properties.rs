use cml_core::arbiter::{agent_weights, grad_m_hat};
use cml_core::distortion::{DistortionFn, DistortionKind};
use cml_core::model::{self, Batch, LossConfig, Sample};
use cml_core::policy::{grad_estimate, policy_probs};
use proptest::prelude::*;

fn vec_in(len: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, len)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Features scaled into the ball of radius 5.
fn sample(x: Vec<f64>, y: bool) -> Sample {
    let n = norm(&x);
    let x = if n > 5.0 {
        x.iter().map(|v| v * 5.0 / n).collect()
    } else {
        x
    };
    Sample::new(x, u8::from(y)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn loss_gradient_is_lipschitz(
        t1 in vec_in(4, -5.0, 5.0),
        t2 in vec_in(4, -5.0, 5.0),
        x in vec_in(4, -4.0, 4.0),
        y: bool,
        gamma in 0.05f64..0.95,
    ) {
        let cfg = LossConfig::new(gamma).unwrap();
        let s = sample(x, y);
        let g1 = model::loss_grad(&t1, &s, &cfg).unwrap();
        let g2 = model::loss_grad(&t2, &s, &cfg).unwrap();
        // the weighted log loss has Hessian bounded by max weight · ‖x‖² / 4
        let l = cfg.max_weight() * norm(&s.x).powi(2) / 4.0;
        prop_assert!(norm(&diff(&g1, &g2)) <= l * norm(&diff(&t1, &t2)) + 1e-12);
    }

    #[test]
    fn weights_are_one_lipschitz(w1 in vec_in(5, -20.0, 20.0), w2 in vec_in(5, -20.0, 20.0)) {
        let dh = diff(&agent_weights(&w1), &agent_weights(&w2));
        prop_assert!(norm(&dh) <= norm(&diff(&w1, &w2)) + 1e-12);
    }

    #[test]
    fn weights_ignore_constant_shift(w in vec_in(4, -30.0, 30.0), c in -500.0f64..500.0) {
        let shifted: Vec<f64> = w.iter().map(|v| v + c).collect();
        let (a, b) = (agent_weights(&w), agent_weights(&shifted));
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn policy_probs_ignore_constant_shift(nu in vec_in(3, -30.0, 30.0), c in -500.0f64..500.0) {
        let shifted: Vec<f64> = nu.iter().map(|v| v + c).collect();
        for (x, y) in policy_probs(&nu).iter().zip(&policy_probs(&shifted)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn distortions_are_monotone(
        kind_idx in 0usize..5,
        lambda in 0.01f64..20.0,
        u in 0.0f64..1.0,
        v in 0.0f64..1.0,
    ) {
        let kind = DistortionKind::ALL[kind_idx];
        let lambda = if kind == DistortionKind::Quadratic { lambda / 20.0 } else { lambda };
        let g = DistortionFn::new(kind, lambda).unwrap();
        let (lo, hi) = if u <= v { (u, v) } else { (v, u) };
        prop_assert!(g.eval(lo).unwrap() <= g.eval(hi).unwrap());
    }

    #[test]
    fn estimator_norm_is_at_most_two(nu in vec_in(5, -10.0, 10.0), s in 0usize..5, m in 0.0f64..1.0) {
        let g = grad_estimate(m, &nu, s).unwrap();
        prop_assert!(norm(&g).powi(2) <= 2.0 + 1e-12);
    }

    #[test]
    fn weight_objective_is_strongly_convex(
        w1 in vec_in(3, -5.0, 5.0),
        w2 in vec_in(3, -5.0, 5.0),
        lambda in 0.01f64..0.5,
        theta in vec_in(2, -3.0, 3.0),
    ) {
        let val: Vec<Batch> = (0..3)
            .map(|i| (0..4).map(|k| sample(vec![i as f64 - 1.0, k as f64 * 0.5], k % 2 == 0)).collect())
            .collect();
        let refs: Vec<&Batch> = val.iter().collect();
        let g1 = grad_m_hat(&theta, &w1, &refs, lambda).unwrap();
        let g2 = grad_m_hat(&theta, &w2, &refs, lambda).unwrap();
        let dw = diff(&w1, &w2);
        let inner: f64 = diff(&g1, &g2).iter().zip(&dw).map(|(a, b)| a * b).sum();
        prop_assert!(inner >= lambda * norm(&dw).powi(2) - 1e-10);
    }
}
