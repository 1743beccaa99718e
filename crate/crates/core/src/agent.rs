//! A single self-interested agent: ranks and partitions each fresh batch,
//! shares one partition drawn from its softmax policy, fine-tunes the model
//! returned by the arbiter on the data it kept, and updates the policy with
//! the score-function gradient of the resulting evaluation.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::math;
use crate::model::{self, Batch, LossConfig, ModelParams, Sample};
use crate::policy::{self, PolicyParams};
use crate::rng::{self, Entity, Purpose, StreamRng};
use crate::schedule::StepSchedule;
use crate::{Error, Result};

/// How an agent ranks its samples before partitioning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ValuationRule {
    /// Highest per-sample loss under the last received model first.
    LossDescending,
    /// Samples of the rarer label in the batch first.
    LabelBalance,
    /// A fresh uniform permutation from the agent's partition stream.
    RandomFixed,
}

/// Agent-side evaluation of a fine-tuned model on its validation split.
/// Both are costs in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EvalFn {
    ErrorRate,
    /// Mean of the arbiter's sigmoid evaluation.
    SigmoidMargin,
}

impl EvalFn {
    pub fn evaluate(&self, theta: &[f64], batch: &Batch) -> Result<f64> {
        match self {
            EvalFn::ErrorRate => model::error_rate(theta, batch),
            EvalFn::SigmoidMargin => model::mean_eval_m(theta, batch),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AgentConfig {
    pub n_strategies: usize,
    /// Train fraction `p` of the retained data.
    pub train_fraction: f64,
    pub fine_batches: usize,
    pub fine_step: f64,
    pub policy_step: StepSchedule,
    pub valuation: ValuationRule,
    pub eval: EvalFn,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            n_strategies: 3,
            train_fraction: 0.7,
            fine_batches: 2,
            fine_step: 0.05,
            policy_step: StepSchedule::INV_SQRT_HORIZON,
            valuation: ValuationRule::LossDescending,
            eval: EvalFn::ErrorRate,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self, path: &str) -> Result<()> {
        if self.n_strategies == 0 {
            return Err(Error::config(
                format!("{path}.strategies"),
                "must be at least 1",
            ));
        }
        if !(self.train_fraction > 0.5 && self.train_fraction < 1.0) {
            return Err(Error::config(
                format!("{path}.train_fraction"),
                format!("{} is outside (0.5, 1)", self.train_fraction),
            ));
        }
        if self.fine_batches == 0 {
            return Err(Error::config(
                format!("{path}.fine_batches"),
                "must be at least 1",
            ));
        }
        if !(0.0..1.0).contains(&self.fine_step) {
            return Err(Error::config(
                format!("{path}.fine_step"),
                format!("{} is outside [0, 1)", self.fine_step),
            ));
        }
        self.policy_step.validate(&format!("{path}.policy_step"))
    }
}

/// Ranks `batch` by `rule` and cuts it into `n_strategies` contiguous
/// partitions, most valuable first. Sizes differ by at most one; the larger
/// partitions come first.
pub fn partition<R: Rng + ?Sized>(
    batch: &Batch,
    n_strategies: usize,
    rule: ValuationRule,
    theta_current: &[f64],
    loss_cfg: &LossConfig,
    rng: &mut R,
) -> Result<Vec<Batch>> {
    if n_strategies == 0 || batch.len() < n_strategies {
        return Err(Error::InsufficientData {
            context: "partition",
            available: batch.len(),
            needed: n_strategies.max(1),
        });
    }
    let mut order: Vec<usize> = (0..batch.len()).collect();
    match rule {
        ValuationRule::LossDescending => {
            let losses = batch
                .iter()
                .map(|s| model::loss(theta_current, s, loss_cfg))
                .collect::<Result<Vec<f64>>>()?;
            order.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]));
        }
        ValuationRule::LabelBalance => {
            let positives = batch.iter().filter(|s| s.y == 1).count();
            let count = |s: &Sample| {
                if s.y == 1 {
                    positives
                } else {
                    batch.len() - positives
                }
            };
            order.sort_by_key(|&i| count(&batch.samples[i]));
        }
        ValuationRule::RandomFixed => order.shuffle(rng),
    }
    let base = batch.len() / n_strategies;
    let extra = batch.len() % n_strategies;
    let mut parts = Vec::with_capacity(n_strategies);
    let mut cursor = 0;
    for j in 0..n_strategies {
        let size = base + usize::from(j < extra);
        parts.push(
            order[cursor..cursor + size]
                .iter()
                .map(|&i| batch.samples[i].clone())
                .collect(),
        );
        cursor += size;
    }
    Ok(parts)
}

/// Uniformly draws a training subset of size `⌊p·|D|⌋`; the rest validates.
pub fn split_train_val<R: Rng + ?Sized>(
    remaining: &Batch,
    p: f64,
    rng: &mut R,
) -> Result<(Batch, Batch)> {
    let n = remaining.len();
    let n_train = math::floor(p * n as f64) as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::InsufficientData {
            context: "train/validation split",
            available: n,
            needed: 2,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let pick = |ids: &[usize]| ids.iter().map(|&i| remaining.samples[i].clone()).collect();
    Ok((pick(&idx[..n_train]), pick(&idx[n_train..])))
}

/// Everything an agent logs about one round.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AgentRoundRecord {
    pub t: usize,
    /// 0-based index of the shared partition; `None` if nothing was shared.
    pub chosen_strategy: Option<usize>,
    /// `None` when the round was skipped.
    pub estimator: Option<Vec<f64>>,
    pub eval_value: Option<f64>,
    /// Policy before this round's update.
    pub policy_snapshot: PolicyParams,
    pub step: f64,
    /// Per-strategy evaluation table, when the environment exposes one.
    pub eval_table: Option<Vec<f64>>,
    pub skipped: Option<String>,
}

impl AgentRoundRecord {
    pub fn estimator_norm_sq(&self) -> Option<f64> {
        self.estimator.as_deref().map(math::norm_sq)
    }
}

/// First half of a round: the partition handed to the arbiter plus what the
/// agent keeps for itself.
#[derive(Debug, Clone)]
pub struct Submission {
    pub t: usize,
    pub strategy: usize,
    pub shared: Batch,
    retained: Batch,
    policy: PolicyParams,
}

impl Submission {
    pub fn retained(&self) -> &Batch {
        &self.retained
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub id: usize,
    config: AgentConfig,
    loss: LossConfig,
    nu: PolicyParams,
    received: ModelParams,
    fine_tuned: Option<ModelParams>,
    horizon: usize,
    t: usize,
    policy_rng: StreamRng,
    partition_rng: StreamRng,
    split_rng: StreamRng,
}

impl Agent {
    pub fn new(
        id: usize,
        config: AgentConfig,
        loss: LossConfig,
        dim: usize,
        horizon: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate(&format!("agents[{id}]"))?;
        let entity = Entity::Agent(id);
        Ok(Agent {
            id,
            nu: PolicyParams::uniform(config.n_strategies),
            config,
            loss,
            received: ModelParams::zeros(dim),
            fine_tuned: None,
            horizon,
            t: 0,
            policy_rng: rng::stream(seed, entity, Purpose::Policy),
            partition_rng: rng::stream(seed, entity, Purpose::Partition),
            split_rng: rng::stream(seed, entity, Purpose::Split),
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.nu
    }

    pub fn received_model(&self) -> &ModelParams {
        &self.received
    }

    pub fn fine_tuned_model(&self) -> Option<&ModelParams> {
        self.fine_tuned.as_ref()
    }

    /// Rounds started so far.
    pub fn rounds(&self) -> usize {
        self.t
    }

    /// Partitions `fresh`, samples a strategy and sets the chosen partition
    /// aside for the arbiter. A batch too small to partition aborts the round
    /// before anything is drawn from the policy.
    pub fn share(&mut self, fresh: Batch) -> Result<Submission> {
        let t = self.t;
        self.t += 1;
        let mut parts = partition(
            &fresh,
            self.config.n_strategies,
            self.config.valuation,
            &self.received,
            &self.loss,
            &mut self.partition_rng,
        )?;
        let strategy = policy::policy_sample(&self.nu, &mut self.policy_rng);
        let shared = parts.remove(strategy);
        let retained = parts.into_iter().flat_map(|b| b.samples).collect();
        Ok(Submission {
            t,
            strategy,
            shared,
            retained,
            policy: self.nu.clone(),
        })
    }

    /// Second half of a round: fine-tune the received model on the retained
    /// training split, evaluate on the retained validation split, and take a
    /// policy-gradient step. Insufficient retained data skips the update.
    pub fn complete(&mut self, sub: Submission, theta_received: &ModelParams) -> AgentRoundRecord {
        self.received = theta_received.clone();
        let step = self.config.policy_step.step(self.horizon);
        let mut record = AgentRoundRecord {
            t: sub.t,
            chosen_strategy: Some(sub.strategy),
            estimator: None,
            eval_value: None,
            policy_snapshot: sub.policy.clone(),
            step,
            eval_table: None,
            skipped: None,
        };
        match self.learn(&sub, theta_received, step) {
            Ok((eval, estimator)) => {
                record.eval_value = Some(eval);
                record.estimator = Some(estimator);
            }
            Err(e) => record.skipped = Some(e.to_string()),
        }
        record
    }

    /// Record for a round in which `share` failed. The agent still takes the
    /// model the arbiter sent.
    pub fn skip(
        &mut self,
        t: usize,
        reason: String,
        theta_received: &ModelParams,
    ) -> AgentRoundRecord {
        self.received = theta_received.clone();
        AgentRoundRecord {
            t,
            chosen_strategy: None,
            estimator: None,
            eval_value: None,
            policy_snapshot: self.nu.clone(),
            step: self.config.policy_step.step(self.horizon),
            eval_table: None,
            skipped: Some(reason),
        }
    }

    fn learn(
        &mut self,
        sub: &Submission,
        theta: &ModelParams,
        step: f64,
    ) -> Result<(f64, Vec<f64>)> {
        let (train, val) = split_train_val(
            &sub.retained,
            self.config.train_fraction,
            &mut self.split_rng,
        )?;
        let chunks = train.split_contiguous(self.config.fine_batches, "fine-tuning batches")?;
        let tuned = model::sgd_steps(theta, &chunks, self.config.fine_step, &self.loss)?;
        let eval = self.config.eval.evaluate(&tuned, &val)?;
        let estimator = policy::grad_estimate(eval, &sub.policy, sub.strategy)?;
        self.nu = policy::policy_update(&sub.policy, &estimator, step)?;
        self.fine_tuned = Some(tuned);
        Ok((eval, estimator))
    }

    /// Both halves back to back, for callers that already hold the model the
    /// agent will receive.
    pub fn round(
        &mut self,
        fresh: Batch,
        theta_received: &ModelParams,
    ) -> Result<(Batch, AgentRoundRecord)> {
        let sub = self.share(fresh)?;
        let shared = sub.shared.clone();
        let record = self.complete(sub, theta_received);
        Ok((shared, record))
    }
}
