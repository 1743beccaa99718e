//! The arbiter: softmax agent weights, the bilevel (θ, ω) updates, and
//! per-agent personalization by distortion-scaled ball noise.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use rand::seq::SliceRandom;

use crate::distortion::DistortionFn;
use crate::math;
use crate::model::{self, Batch, LossConfig, ModelParams};
use crate::noise::ball_sample;
use crate::rng::{self, Entity, Purpose, StreamRng};
use crate::schedule::StepSchedule;
use crate::{Error, Result};

/// Logits of the agent weights, one per agent.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct WeightParams(pub Vec<f64>);

impl WeightParams {
    /// All zeros: every agent starts with equal priority.
    pub fn zeros(n_agents: usize) -> Self {
        WeightParams(vec![0.0; n_agents])
    }
}

impl Deref for WeightParams {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArbiterConfig {
    /// Train fraction `p` of each shared batch.
    pub train_fraction: f64,
    /// Inner θ steps per round.
    pub inner_batches: usize,
    pub lambda_omega: f64,
    pub alpha: StepSchedule,
    pub beta: StepSchedule,
    pub distortion: DistortionFn,
    /// Multiplier on the noise radius; 1 leaves it absolute.
    pub noise_scale: f64,
}

impl Default for ArbiterConfig {
    fn default() -> Self {
        ArbiterConfig {
            train_fraction: 0.7,
            inner_batches: 3,
            lambda_omega: 0.1,
            alpha: StepSchedule::TWO_TIMESCALE_INNER,
            beta: StepSchedule::TWO_TIMESCALE_OUTER,
            distortion: DistortionFn::identity(),
            noise_scale: 1.0,
        }
    }
}

impl ArbiterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.5 && self.train_fraction < 1.0) {
            return Err(Error::config(
                "arbiter.train_fraction",
                format!("{} is outside (0.5, 1)", self.train_fraction),
            ));
        }
        if self.inner_batches == 0 {
            return Err(Error::config("arbiter.inner_batches", "must be at least 1"));
        }
        if !(self.lambda_omega > 0.0 && self.lambda_omega <= 0.5) {
            return Err(Error::config(
                "arbiter.lambda_omega",
                format!("{} is outside (0, 0.5]", self.lambda_omega),
            ));
        }
        self.alpha.validate("arbiter.alpha")?;
        self.beta.validate("arbiter.beta")?;
        self.distortion.validate("arbiter.distortion")?;
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::config(
                "arbiter.noise_scale",
                format!("{} must be a nonnegative number", self.noise_scale),
            ));
        }
        Ok(())
    }
}

/// `h_ω = softmax(ω)`
pub fn agent_weights(omega: &[f64]) -> Vec<f64> {
    math::softmax(omega)
}

/// `Σ_i h_ω(i) · mean ∇l over sub_batches[i]`
pub fn grad_l_hat(
    theta: &[f64],
    omega: &[f64],
    sub_batches: &[&Batch],
    loss: &LossConfig,
) -> Result<Vec<f64>> {
    math::check_dim(omega.len(), sub_batches.len())?;
    let h = agent_weights(omega);
    let mut g = vec![0.0; theta.len()];
    for (w, batch) in h.iter().zip(sub_batches) {
        math::axpy(*w, &model::mean_loss_grad(theta, batch, loss)?, &mut g);
    }
    Ok(g)
}

/// Mean arbiter evaluation on each validation set.
pub fn mean_evals(theta: &[f64], val_batches: &[&Batch]) -> Result<Vec<f64>> {
    val_batches
        .iter()
        .map(|b| model::mean_eval_m(theta, b))
        .collect()
}

/// `(mean m over V_i)_i + λ_ω ω`
pub fn grad_m_hat(
    theta: &[f64],
    omega: &[f64],
    val_batches: &[&Batch],
    lambda_omega: f64,
) -> Result<Vec<f64>> {
    math::check_dim(omega.len(), val_batches.len())?;
    let m = mean_evals(theta, val_batches)?;
    Ok(m.iter()
        .zip(omega)
        .map(|(mi, wi)| mi + lambda_omega * wi)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerLoop {
    pub theta_next: ModelParams,
    /// `θ_{t,0}, …, θ_{t,n_b}`
    pub trajectory: Vec<ModelParams>,
    /// `‖∇̂L(θ_{t,k})‖²` for `k = 0..n_b`
    pub grad_sq: Vec<f64>,
}

/// `n_b` descent steps on `L̂`; step `k` uses chunk `k` of every agent's
/// training set (contiguous chunks, remainder in the last).
pub fn inner_theta_loop(
    theta_t: &ModelParams,
    omega_t: &[f64],
    training_sets: &[&Batch],
    alpha: f64,
    n_b: usize,
    loss: &LossConfig,
) -> Result<InnerLoop> {
    if n_b == 0 {
        return Err(Error::OutOfRange {
            what: "inner batches",
            value: 0.0,
            range: "[1, inf)",
        });
    }
    let chunks = training_sets
        .iter()
        .map(|t| t.split_contiguous(n_b, "arbiter inner batches"))
        .collect::<Result<Vec<_>>>()?;
    let mut theta = theta_t.0.clone();
    let mut trajectory = Vec::with_capacity(n_b + 1);
    let mut grad_sq = Vec::with_capacity(n_b);
    trajectory.push(theta_t.clone());
    for k in 0..n_b {
        let step_batches: Vec<&Batch> = chunks.iter().map(|c| &c[k]).collect();
        let g = grad_l_hat(&theta, omega_t, &step_batches, loss)?;
        grad_sq.push(math::norm_sq(&g));
        math::axpy(-alpha, &g, &mut theta);
        trajectory.push(ModelParams(theta.clone()));
    }
    Ok(InnerLoop {
        theta_next: ModelParams(theta),
        trajectory,
        grad_sq,
    })
}

/// `ω - β ∇̂M(θ_next, ω)`; also returns the gradient used.
pub fn omega_update(
    omega_t: &[f64],
    theta_next: &[f64],
    val_batches: &[&Batch],
    beta: f64,
    lambda_omega: f64,
) -> Result<(WeightParams, Vec<f64>)> {
    let g = grad_m_hat(theta_next, omega_t, val_batches, lambda_omega)?;
    let next = omega_t
        .iter()
        .zip(&g)
        .map(|(w, gi)| w - beta * gi)
        .collect();
    Ok((WeightParams(next), g))
}

/// Noise radius `ρ (1 - g(h))` for every agent.
pub fn noise_radii(omega: &[f64], g: &DistortionFn, rho: f64) -> Result<Vec<f64>> {
    agent_weights(omega)
        .into_iter()
        .map(|h| Ok(rho * (1.0 - g.eval(h)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Personalized {
    pub models: Vec<ModelParams>,
    pub radii: Vec<f64>,
    pub noise: Vec<Vec<f64>>,
}

/// `θ_i = θ + η_i`, `η_i` uniform in the ball of radius `ρ (1 - g(h_ω(i)))`.
/// Agent `i` draws from `rngs[i]`.
pub fn personalize(
    theta_next: &ModelParams,
    omega_next: &[f64],
    g: &DistortionFn,
    rho: f64,
    rngs: &mut [StreamRng],
) -> Result<Personalized> {
    math::check_dim(omega_next.len(), rngs.len())?;
    let radii = noise_radii(omega_next, g, rho)?;
    let d = theta_next.dim();
    let noise: Vec<Vec<f64>> = radii
        .iter()
        .zip(rngs.iter_mut())
        .map(|(&r, rng)| ball_sample(r, d, rng))
        .collect();
    let models = noise
        .iter()
        .map(|eta| ModelParams(theta_next.iter().zip(eta).map(|(a, b)| a + b).collect()))
        .collect();
    Ok(Personalized {
        models,
        radii,
        noise,
    })
}

/// A partition shared by one agent in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundContribution {
    pub agent_id: usize,
    pub batch: Batch,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArbiterRoundRecord {
    pub t: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_omega: f64,
    /// Why an agent was left out of this round's estimators, if it was.
    pub excluded: Vec<Option<String>>,
    pub shared_sizes: Vec<usize>,
    pub val_sizes: Vec<usize>,
    pub theta_trajectory: Vec<Vec<f64>>,
    pub grad_l_sq: Vec<f64>,
    pub omega_before: Vec<f64>,
    pub omega: Vec<f64>,
    /// Weights applied to the training gradients (0 for excluded agents).
    pub train_weights: Vec<f64>,
    pub mean_evals: Vec<Option<f64>>,
    pub grad_m: Vec<Option<f64>>,
    /// `h` at the updated `ω`.
    pub weights: Vec<f64>,
    pub radii: Vec<f64>,
    pub noise: Vec<Vec<f64>>,
    pub weighted_train_loss: Option<f64>,
}

impl ArbiterRoundRecord {
    pub fn theta(&self) -> &[f64] {
        self.theta_trajectory
            .last()
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn mean_grad_l_sq(&self) -> Option<f64> {
        math::mean(&self.grad_l_sq)
    }
}

#[derive(Debug, Clone)]
pub struct Arbiter {
    config: ArbiterConfig,
    loss: LossConfig,
    theta: ModelParams,
    omega: WeightParams,
    horizon: usize,
    t: usize,
    split_rng: StreamRng,
    noise_rngs: Vec<StreamRng>,
}

impl Arbiter {
    pub fn new(
        config: ArbiterConfig,
        loss: LossConfig,
        n_agents: usize,
        dim: usize,
        horizon: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Arbiter {
            config,
            loss,
            theta: ModelParams::zeros(dim),
            omega: WeightParams::zeros(n_agents),
            horizon,
            t: 0,
            split_rng: rng::stream(seed, Entity::Arbiter, Purpose::Split),
            // noise for agent i lives on agent i's stream
            noise_rngs: (0..n_agents)
                .map(|i| rng::stream(seed, Entity::Agent(i), Purpose::Noise))
                .collect(),
        })
    }

    pub fn theta(&self) -> &ModelParams {
        &self.theta
    }

    pub fn omega(&self) -> &WeightParams {
        &self.omega
    }

    pub fn config(&self) -> &ArbiterConfig {
        &self.config
    }

    pub fn n_agents(&self) -> usize {
        self.omega.len()
    }

    /// One round: split every contribution, run the inner θ loop and the ω
    /// step over the agents with enough data, then personalize for everyone.
    /// Agents without usable data keep their ω entry and are left out of both
    /// estimators, but still receive a model.
    pub fn round(
        &mut self,
        contributions: &[RoundContribution],
    ) -> Result<(Vec<ModelParams>, ArbiterRoundRecord)> {
        let n = self.n_agents();
        let n_b = self.config.inner_batches;
        let alpha = self.config.alpha.step(self.horizon);
        let beta = self.config.beta.step(self.horizon);

        let mut train: Vec<Option<Batch>> = vec![None; n];
        let mut val: Vec<Option<Batch>> = vec![None; n];
        let mut excluded: Vec<Option<String>> = vec![Some("no data shared".to_string()); n];
        let mut shared_sizes = vec![0; n];
        let mut val_sizes = vec![0; n];
        for c in contributions {
            if c.agent_id >= n {
                return Err(Error::OutOfRange {
                    what: "agent id",
                    value: c.agent_id as f64,
                    range: "[0, n_agents)",
                });
            }
            shared_sizes[c.agent_id] = c.batch.len();
            let size = c.batch.len();
            let n_train = math::floor(self.config.train_fraction * size as f64) as usize;
            if n_train < n_b || n_train >= size {
                excluded[c.agent_id] = Some(
                    Error::InsufficientData {
                        context: "arbiter split",
                        available: size,
                        needed: n_b + 1,
                    }
                    .to_string(),
                );
                continue;
            }
            let mut samples = c.batch.samples.clone();
            samples.shuffle(&mut self.split_rng);
            let v = samples.split_off(n_train);
            val_sizes[c.agent_id] = v.len();
            train[c.agent_id] = Some(Batch::new(samples));
            val[c.agent_id] = Some(Batch::new(v));
            excluded[c.agent_id] = None;
        }

        let included: Vec<usize> = (0..n).filter(|&i| excluded[i].is_none()).collect();
        let omega_before = self.omega.0.clone();
        let omega_sub: Vec<f64> = included.iter().map(|&i| omega_before[i]).collect();
        let train_sets: Vec<&Batch> = included.iter().filter_map(|&i| train[i].as_ref()).collect();
        let val_sets: Vec<&Batch> = included.iter().filter_map(|&i| val[i].as_ref()).collect();

        let mut train_weights = vec![0.0; n];
        let mut mean_evals_full = vec![None; n];
        let mut grad_m_full = vec![None; n];
        let mut weighted_train_loss = None;
        let (trajectory, grad_l_sq) = if included.is_empty() {
            (vec![self.theta.clone(); n_b + 1], Vec::new())
        } else {
            let h_sub = agent_weights(&omega_sub);
            for (&i, &w) in included.iter().zip(&h_sub) {
                train_weights[i] = w;
            }
            let inner =
                inner_theta_loop(&self.theta, &omega_sub, &train_sets, alpha, n_b, &self.loss)?;
            let (omega_sub_next, grad_m) = omega_update(
                &omega_sub,
                &inner.theta_next,
                &val_sets,
                beta,
                self.config.lambda_omega,
            )?;
            let evals = mean_evals(&inner.theta_next, &val_sets)?;
            let mut wl = 0.0;
            for (k, &i) in included.iter().enumerate() {
                self.omega.0[i] = omega_sub_next[k];
                mean_evals_full[i] = Some(evals[k]);
                grad_m_full[i] = Some(grad_m[k]);
                wl += h_sub[k] * model::mean_loss(&inner.theta_next, train_sets[k], &self.loss)?;
            }
            weighted_train_loss = Some(wl);
            self.theta = inner.theta_next;
            (inner.trajectory, inner.grad_sq)
        };

        let personalized = personalize(
            &self.theta,
            &self.omega,
            &self.config.distortion,
            self.config.noise_scale,
            &mut self.noise_rngs,
        )?;
        let record = ArbiterRoundRecord {
            t: self.t,
            alpha,
            beta,
            lambda_omega: self.config.lambda_omega,
            excluded,
            shared_sizes,
            val_sizes,
            theta_trajectory: trajectory.into_iter().map(|m| m.0).collect(),
            grad_l_sq,
            omega_before,
            omega: self.omega.0.clone(),
            train_weights,
            mean_evals: mean_evals_full,
            grad_m: grad_m_full,
            weights: agent_weights(&self.omega),
            radii: personalized.radii,
            noise: personalized.noise,
            weighted_train_loss,
        };
        self.t += 1;
        Ok((personalized.models, record))
    }
}
