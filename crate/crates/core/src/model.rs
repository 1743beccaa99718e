//! Logistic predictor, weighted binary log loss and its closed-form
//! derivatives, the arbiter's sigmoid evaluation function, and plain
//! minibatch SGD.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use crate::math::{self, check_dim, Matrix};
use crate::{Error, Result};

/// Predictions are clamped to `[CLAMP_EPS, 1 - CLAMP_EPS]` before taking logs.
pub const CLAMP_EPS: f64 = 1e-12;

/// One labelled example. `y` is 0 or 1.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: u8,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: u8) -> Result<Self> {
        if y > 1 {
            return Err(Error::InvalidLabel(y));
        }
        Ok(Sample { x, y })
    }

    #[inline]
    pub fn label(&self) -> f64 {
        f64::from(self.y)
    }

    /// The label mapped to `{-1, +1}`.
    #[inline]
    pub fn signed_label(&self) -> f64 {
        2.0 * self.label() - 1.0
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Batch {
    pub samples: Vec<Sample>,
}

impl Batch {
    pub fn new(samples: Vec<Sample>) -> Self {
        Batch { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    /// Largest feature norm in the batch (0 for an empty batch).
    pub fn max_norm(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| math::norm(&s.x))
            .fold(0.0, f64::max)
    }

    /// Split into `parts` contiguous chunks of `len / parts` samples; the
    /// remainder goes to the last chunk.
    pub fn split_contiguous(&self, parts: usize, context: &'static str) -> Result<Vec<Batch>> {
        if parts == 0 || self.len() < parts {
            return Err(Error::InsufficientData {
                context,
                available: self.len(),
                needed: parts.max(1),
            });
        }
        let base = self.len() / parts;
        let mut out = Vec::with_capacity(parts);
        for k in 0..parts {
            let start = k * base;
            let end = if k + 1 == parts {
                self.len()
            } else {
                start + base
            };
            out.push(Batch::new(self.samples[start..end].to_vec()));
        }
        Ok(out)
    }
}

impl FromIterator<Sample> for Batch {
    fn from_iter<I: IntoIterator<Item = Sample>>(iter: I) -> Self {
        Batch::new(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a Batch {
    type Item = &'a Sample;
    type IntoIter = core::slice::Iter<'a, Sample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

/// Parameters of the shared predictor.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct ModelParams(pub Vec<f64>);

impl ModelParams {
    pub fn zeros(dim: usize) -> Self {
        ModelParams(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl Deref for ModelParams {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Class weight of the weighted log loss.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossConfig {
    pub gamma: f64,
}

impl LossConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::OutOfRange {
                what: "gamma",
                value: gamma,
                range: "(0, 1)",
            });
        }
        Ok(LossConfig { gamma })
    }

    /// `max(γ, 1-γ)`, the factor shared by the gradient and Hessian bounds.
    pub fn max_weight(&self) -> f64 {
        self.gamma.max(1.0 - self.gamma)
    }

    #[inline]
    fn class_weight(&self, y: f64) -> f64 {
        self.gamma * y + (1.0 - self.gamma) * (1.0 - y)
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { gamma: 0.5 }
    }
}

/// `1 / (1 + exp(-θᵀx))`. Saturates to exactly 0 or 1 in floating point once
/// `|θᵀx|` exceeds roughly 37.
pub fn predict(theta: &[f64], x: &[f64]) -> Result<f64> {
    check_dim(theta.len(), x.len())?;
    Ok(math::sigmoid(math::dot(theta, x)))
}

/// Predicted class under the 0.5 threshold; an exact tie predicts class 1.
pub fn classify(theta: &[f64], x: &[f64]) -> Result<u8> {
    Ok(u8::from(predict(theta, x)? >= 0.5))
}

pub fn loss(theta: &[f64], sample: &Sample, cfg: &LossConfig) -> Result<f64> {
    check_dim(theta.len(), sample.dim())?;
    let z = math::dot(theta, &sample.x);
    let clamp = |p: f64| p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
    // σ(-z) rather than 1 - σ(z) keeps precision for confident predictions.
    let f = clamp(math::sigmoid(z));
    let f_c = clamp(math::sigmoid(-z));
    let y = sample.label();
    Ok(-cfg.gamma * y * math::ln(f) - (1.0 - cfg.gamma) * (1.0 - y) * math::ln(f_c))
}

/// `((γy + (1-γ)(1-y)) f - γy) x`
pub fn loss_grad(theta: &[f64], sample: &Sample, cfg: &LossConfig) -> Result<Vec<f64>> {
    let f = predict(theta, &sample.x)?;
    let y = sample.label();
    let coef = cfg.class_weight(y) * f - cfg.gamma * y;
    Ok(sample.x.iter().map(|xi| coef * xi).collect())
}

/// `(γy + (1-γ)(1-y)) f (1-f) x xᵀ`
pub fn loss_hessian(theta: &[f64], sample: &Sample, cfg: &LossConfig) -> Result<Matrix> {
    let f = predict(theta, &sample.x)?;
    let coef = cfg.class_weight(sample.label()) * f * (1.0 - f);
    Ok(Matrix::outer(&sample.x, coef))
}

/// Arbiter evaluation `1 - σ(y' f_θ(x))` with `y' = 2y - 1`; lower is better.
pub fn arbiter_eval_m(theta: &[f64], sample: &Sample) -> Result<f64> {
    let f = predict(theta, &sample.x)?;
    Ok(1.0 - math::sigmoid(sample.signed_label() * f))
}

/// `-x y' m (1-m) f (1-f)`
pub fn arbiter_eval_m_grad(theta: &[f64], sample: &Sample) -> Result<Vec<f64>> {
    let f = predict(theta, &sample.x)?;
    let y = sample.signed_label();
    let m = 1.0 - math::sigmoid(y * f);
    let coef = -y * m * (1.0 - m) * f * (1.0 - f);
    Ok(sample.x.iter().map(|xi| coef * xi).collect())
}

/// Fraction of misclassified samples.
pub fn error_rate(theta: &[f64], batch: &Batch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut wrong = 0usize;
    for s in batch {
        if classify(theta, &s.x)? != s.y {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / batch.len() as f64)
}

pub fn mean_loss(theta: &[f64], batch: &Batch, cfg: &LossConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut total = 0.0;
    for s in batch {
        total += loss(theta, s, cfg)?;
    }
    Ok(total / batch.len() as f64)
}

pub fn mean_loss_grad(theta: &[f64], batch: &Batch, cfg: &LossConfig) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch {
            context: "averaged loss gradient",
        });
    }
    let mut g = vec![0.0; theta.len()];
    for s in batch {
        math::axpy(1.0, &loss_grad(theta, s, cfg)?, &mut g);
    }
    let inv = 1.0 / batch.len() as f64;
    g.iter_mut().for_each(|v| *v *= inv);
    Ok(g)
}

pub fn mean_eval_m(theta: &[f64], batch: &Batch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut total = 0.0;
    for s in batch {
        total += arbiter_eval_m(theta, s)?;
    }
    Ok(total / batch.len() as f64)
}

/// One averaged-gradient step per batch, in order.
pub fn sgd_steps(
    theta0: &ModelParams,
    batches: &[Batch],
    step: f64,
    cfg: &LossConfig,
) -> Result<ModelParams> {
    if !(0.0..1.0).contains(&step) {
        return Err(Error::OutOfRange {
            what: "SGD step",
            value: step,
            range: "[0, 1)",
        });
    }
    let mut theta = theta0.0.clone();
    for batch in batches {
        let g = mean_loss_grad(&theta, batch, cfg)?;
        math::axpy(-step, &g, &mut theta);
    }
    Ok(ModelParams(theta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: &[f64], y: u8) -> Sample {
        Sample::new(x.to_vec(), y).unwrap()
    }

    #[test]
    fn predict_examples() {
        assert_eq!(predict(&[1.0, -1.0], &[2.0, 2.0]).unwrap(), 0.5);
        assert_eq!(predict(&[0.0, 0.0, 0.0], &[3.0, -1.0, 7.0]).unwrap(), 0.5);
        let p = predict(&[3.0f64.ln()], &[1.0]).unwrap();
        assert!((p - 0.75).abs() < 1e-15);
    }

    #[test]
    fn predict_rejects_dimension_mismatch() {
        assert_eq!(
            predict(&[1.0, 2.0], &[1.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 1
            })
        );
    }

    #[test]
    fn loss_at_half() {
        let cfg = LossConfig::new(0.5).unwrap();
        let l1 = loss(&[0.0], &s(&[1.0], 1), &cfg).unwrap();
        assert!((l1 - 0.5 * 2f64.ln()).abs() < 1e-15);
        // (y, f) -> (1-y, 1-f) symmetry at γ = 0.5, f = 0.5
        let l0 = loss(&[0.0], &s(&[1.0], 0), &cfg).unwrap();
        assert_eq!(l0, l1);
    }

    #[test]
    fn loss_vanishes_for_confident_correct_prediction() {
        let cfg = LossConfig::default();
        // only the clamp at 1 - 1e-12 keeps it off zero
        let l = loss(&[-60.0], &s(&[1.0], 0), &cfg).unwrap();
        assert!(l < 1e-12);
        // clamped, so a confident wrong answer stays finite
        let wrong = loss(&[-60.0], &s(&[1.0], 1), &cfg).unwrap();
        assert!(wrong.is_finite());
    }

    #[test]
    fn loss_grad_at_half() {
        let cfg = LossConfig::new(0.5).unwrap();
        let g = loss_grad(&[0.0, 0.0], &s(&[2.0, -4.0], 1), &cfg).unwrap();
        assert_eq!(g, vec![-0.5, 1.0]);
        let saturated = loss_grad(&[50.0], &s(&[1.0], 1), &cfg).unwrap();
        assert!(saturated[0].abs() < 1e-20);
    }

    #[test]
    fn hessian_at_half() {
        let cfg = LossConfig::new(0.5).unwrap();
        let x = [1.0, 2.0];
        let h = loss_hessian(&[0.0, 0.0], &s(&x, 1), &cfg).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((h.get(i, j) - 0.125 * x[i] * x[j]).abs() < 1e-15);
            }
        }
        assert_eq!(h.max_asymmetry(), 0.0);
        assert!(h.symmetric_eigenvalues().iter().all(|&v| v > -1e-15));
    }

    #[test]
    fn arbiter_eval_examples() {
        // y' f = 0 only when f = 0, approached by a very negative logit
        let m = arbiter_eval_m(&[-800.0], &s(&[1.0], 1)).unwrap();
        assert!((m - 0.5).abs() < 1e-12);
        let confident = arbiter_eval_m(&[50.0], &s(&[1.0], 1)).unwrap();
        assert!((confident - math::sigmoid(-1.0)).abs() < 1e-12);
        assert!(confident < 0.5);
    }

    #[test]
    fn error_rate_examples() {
        let batch = Batch::new(vec![
            s(&[1.0], 1),
            s(&[-1.0], 0),
            s(&[2.0], 0),
            s(&[3.0], 1),
        ]);
        // zero model predicts 1 everywhere: the two 0-labels are wrong
        assert_eq!(error_rate(&[0.0], &batch).unwrap(), 0.5);
        let perfect = Batch::new(vec![s(&[1.0], 1), s(&[-1.0], 0)]);
        assert_eq!(error_rate(&[1.0], &perfect).unwrap(), 0.0);
        let single = Batch::new(vec![s(&[1.0], 0)]);
        assert_eq!(error_rate(&[1.0], &single).unwrap(), 1.0);
        assert_eq!(
            error_rate(&[1.0], &Batch::default()),
            Err(Error::EmptyEvaluation)
        );
    }

    #[test]
    fn sgd_edge_cases() {
        let cfg = LossConfig::default();
        let theta0 = ModelParams(vec![0.3, -0.2]);
        assert_eq!(sgd_steps(&theta0, &[], 0.1, &cfg).unwrap(), theta0);
        let saturated = ModelParams(vec![80.0, 0.0]);
        let b = Batch::new(vec![s(&[1.0, 0.0], 1)]);
        let out = sgd_steps(&saturated, &[b], 0.5, &cfg).unwrap();
        assert!((out[0] - 80.0).abs() < 1e-12);
        let err = sgd_steps(&theta0, &[Batch::default()], 0.1, &cfg);
        assert!(matches!(err, Err(Error::EmptyBatch { .. })));
    }

    #[test]
    fn split_contiguous_puts_remainder_last() {
        let b: Batch = (0..7).map(|i| s(&[i as f64], 0)).collect();
        let parts = b.split_contiguous(3, "test").unwrap();
        let sizes: Vec<usize> = parts.iter().map(Batch::len).collect();
        assert_eq!(sizes, vec![2, 2, 3]);
        assert!(b.split_contiguous(8, "test").is_err());
        assert!(b.split_contiguous(0, "test").is_err());
    }
}
