//! Synthetic data laws and the round orchestrator.
//!
//! Every round runs behind two barriers: all agents submit, the arbiter trains
//! and personalizes, then every agent fine-tunes and updates. RNG draws come
//! from per-(entity, purpose) streams, so the metric stream is a pure function
//! of the configuration.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::agent::{Agent, AgentConfig, AgentRoundRecord};
use crate::arbiter::{Arbiter, ArbiterConfig, ArbiterRoundRecord, RoundContribution};
use crate::math;
use crate::model::{self, Batch, LossConfig, ModelParams, Sample};
use crate::policy::PolicyParams;
use crate::rng::{self, Entity, Purpose, StreamRng};
use crate::{Error, Result};

/// Draws beyond this many rejections fall back to radial projection.
const MAX_REJECTIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GlobalDistribution {
    pub theta_star: ModelParams,
    pub x_max: f64,
    pub feature_std: f64,
}

impl GlobalDistribution {
    /// Ground truth drawn uniformly on the sphere of radius `theta_star_norm`.
    pub fn from_seed(data: &DataConfig, dim: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, Entity::Environment, Purpose::GroundTruth);
        let mut theta: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = math::norm(&theta);
        if n > 0.0 {
            theta
                .iter_mut()
                .for_each(|v| *v *= data.theta_star_norm / n);
        }
        GlobalDistribution {
            theta_star: ModelParams(theta),
            x_max: data.x_max,
            feature_std: data.feature_std,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta_star.dim()
    }

    fn features<R: Rng + ?Sized>(&self, shift: Option<&[f64]>, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let mut x = vec![0.0; d];
        for _ in 0..MAX_REJECTIONS {
            for (j, v) in x.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *v = shift.map_or(0.0, |s| s[j]) + self.feature_std * z;
            }
            if math::norm(&x) <= self.x_max {
                return x;
            }
        }
        let n = math::norm(&x);
        x.iter_mut().for_each(|v| *v *= self.x_max / n);
        x
    }

    fn label<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> u8 {
        let p = math::sigmoid(math::dot(&self.theta_star, x));
        u8::from(rng.random::<f64>() < p)
    }
}

/// One draw from the global law: truncated spherical Gaussian features and a
/// Bernoulli label from the ground-truth sigmoid.
pub fn gen_global_sample<R: Rng + ?Sized>(dist: &GlobalDistribution, rng: &mut R) -> Sample {
    let x = dist.features(None, rng);
    let y = dist.label(&x, rng);
    Sample { x, y }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum BatchSizeLaw {
    Fixed {
        size: usize,
    },
    /// Poisson around `mean`, floored at 1.
    Poisson {
        mean: f64,
    },
}

impl BatchSizeLaw {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match *self {
            BatchSizeLaw::Fixed { size } => size,
            BatchSizeLaw::Poisson { mean } => {
                let k: f64 = Poisson::new(mean).map(|p| p.sample(rng)).unwrap_or(1.0);
                (k as usize).max(1)
            }
        }
    }
}

/// How one agent's data departs from the global law.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AgentDistribution {
    /// Feature mean; empty means zero.
    pub mean_shift: Vec<f64>,
    pub label_flip_rate: f64,
    pub batch_size: BatchSizeLaw,
    /// Invert every label after flipping.
    pub adversarial: bool,
}

impl Default for AgentDistribution {
    fn default() -> Self {
        AgentDistribution {
            mean_shift: Vec::new(),
            label_flip_rate: 0.0,
            batch_size: BatchSizeLaw::Fixed { size: 40 },
            adversarial: false,
        }
    }
}

impl AgentDistribution {
    pub fn validate(&self, path: &str, dim: usize) -> Result<()> {
        if !self.mean_shift.is_empty() && self.mean_shift.len() != dim {
            return Err(Error::config(
                format!("{path}.mean_shift"),
                format!("has {} entries, expected {dim}", self.mean_shift.len()),
            ));
        }
        if self.mean_shift.iter().any(|v| !v.is_finite()) {
            return Err(Error::config(
                format!("{path}.mean_shift"),
                "entries must be finite",
            ));
        }
        if !(0.0..0.5).contains(&self.label_flip_rate) {
            return Err(Error::config(
                format!("{path}.label_flip_rate"),
                format!("{} is outside [0, 0.5)", self.label_flip_rate),
            ));
        }
        match self.batch_size {
            BatchSizeLaw::Fixed { size: 0 } => Err(Error::config(
                format!("{path}.batch_size.size"),
                "must be at least 1",
            )),
            BatchSizeLaw::Poisson { mean } if !(mean > 0.0 && mean.is_finite()) => {
                Err(Error::config(
                    format!("{path}.batch_size.mean"),
                    format!("{mean} must be positive"),
                ))
            }
            _ => Ok(()),
        }
    }
}

/// A fresh batch for one agent. Shift is applied before truncation; labels
/// are drawn from the ground truth, then flipped, then inverted if adversarial.
pub fn gen_agent_batch<R: Rng + ?Sized>(
    agent: &AgentDistribution,
    global: &GlobalDistribution,
    rng: &mut R,
) -> Batch {
    let size = agent.batch_size.draw(rng);
    let shift = (!agent.mean_shift.is_empty()).then_some(agent.mean_shift.as_slice());
    (0..size)
        .map(|_| {
            let x = global.features(shift, rng);
            let mut y = global.label(&x, rng);
            if agent.label_flip_rate > 0.0 && rng.random::<f64>() < agent.label_flip_rate {
                y = 1 - y;
            }
            if agent.adversarial {
                y = 1 - y;
            }
            Sample { x, y }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DataConfig {
    pub x_max: f64,
    pub feature_std: f64,
    pub theta_star_norm: f64,
    pub heldout_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            x_max: 5.0,
            feature_std: 1.0,
            theta_star_norm: 4.0,
            heldout_size: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AgentSpec {
    pub agent: AgentConfig,
    pub distribution: AgentDistribution,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExperimentConfig {
    pub dim: usize,
    pub rounds: usize,
    pub seed: u64,
    pub data: DataConfig,
    /// One entry per agent; the agent count is its length.
    pub agents: Vec<AgentSpec>,
    pub arbiter: ArbiterConfig,
    pub loss: LossConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dim: 10,
            rounds: 500,
            seed: 0,
            data: DataConfig::default(),
            agents: vec![AgentSpec::default(); 4],
            arbiter: ArbiterConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        if self.dim == 0 {
            return Err(Error::config("dim", "must be at least 1"));
        }
        if self.agents.is_empty() {
            return Err(Error::config("agents", "at least one agent is required"));
        }
        let d = &self.data;
        if !(d.x_max > 0.0 && d.x_max.is_finite()) {
            return Err(Error::config(
                "data.x_max",
                format!("{} must be positive", d.x_max),
            ));
        }
        if !(d.feature_std > 0.0 && d.feature_std.is_finite()) {
            return Err(Error::config(
                "data.feature_std",
                format!("{} must be positive", d.feature_std),
            ));
        }
        if !(d.theta_star_norm >= 0.0 && d.theta_star_norm.is_finite()) {
            return Err(Error::config(
                "data.theta_star_norm",
                format!("{} must be nonnegative", d.theta_star_norm),
            ));
        }
        if d.heldout_size == 0 {
            return Err(Error::config("data.heldout_size", "must be at least 1"));
        }
        LossConfig::new(self.loss.gamma).map_err(|_| {
            Error::config(
                "loss.gamma",
                format!("{} is outside (0, 1)", self.loss.gamma),
            )
        })?;
        self.arbiter.validate()?;
        for (i, spec) in self.agents.iter().enumerate() {
            let path = format!("agents[{i}]");
            spec.agent.validate(&path)?;
            spec.distribution.validate(&path, self.dim)?;
        }
        Ok(())
    }
}

/// Per-agent columns of a metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentMetrics {
    pub strategy: Option<usize>,
    pub eval: Option<f64>,
    pub grad_sq: Option<f64>,
    pub weight: f64,
    pub radius: f64,
}

/// One row per round. Held-out values are measured at the model produced by
/// the round.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub t: usize,
    pub agents: Vec<AgentMetrics>,
    pub train_loss: Option<f64>,
    /// Mean over the round's inner steps.
    pub grad_l_sq: Option<f64>,
    pub omega_norm: f64,
    pub heldout_loss: f64,
    pub heldout_error: f64,
}

const AGENT_COLUMNS: [&str; 5] = ["strategy", "eval", "grad_sq", "weight", "radius"];
const ARBITER_COLUMNS: [&str; 5] = [
    "train_loss",
    "grad_l_sq",
    "omega_norm",
    "heldout_loss",
    "heldout_error",
];

impl MetricsRow {
    /// Column names, in order, for `n_agents` agents.
    pub fn columns(n_agents: usize) -> Vec<String> {
        let mut cols = vec!["t".to_string()];
        for i in 0..n_agents {
            cols.extend(AGENT_COLUMNS.iter().map(|c| format!("agent{i}_{c}")));
        }
        cols.extend(ARBITER_COLUMNS.iter().map(|c| c.to_string()));
        cols
    }

    /// Values aligned with [`MetricsRow::columns`]; `None` is a missing value.
    pub fn values(&self) -> Vec<Option<f64>> {
        let mut v = vec![Some(self.t as f64)];
        for a in &self.agents {
            v.extend([
                a.strategy.map(|s| s as f64),
                a.eval,
                a.grad_sq,
                Some(a.weight),
                Some(a.radius),
            ]);
        }
        v.extend([
            self.train_loss,
            self.grad_l_sq,
            Some(self.omega_norm),
            Some(self.heldout_loss),
            Some(self.heldout_error),
        ]);
        v
    }
}

/// A non-fatal event raised during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub t: usize,
    pub agent: Option<usize>,
    pub message: String,
}

/// What an observer sees after each round.
pub struct RoundView<'a> {
    pub t: usize,
    pub contributions: &'a [RoundContribution],
    pub models: &'a [ModelParams],
    pub agents: &'a [Agent],
    pub arbiter: &'a Arbiter,
    pub agent_records: &'a [AgentRoundRecord],
    pub arbiter_record: &'a ArbiterRoundRecord,
}

pub trait RoundObserver {
    fn on_round(&mut self, view: &RoundView<'_>);
}

impl RoundObserver for () {
    fn on_round(&mut self, _: &RoundView<'_>) {}
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub rows: Vec<MetricsRow>,
    /// `agent_records[t][i]`
    pub agent_records: Vec<Vec<AgentRoundRecord>>,
    pub arbiter_records: Vec<ArbiterRoundRecord>,
    pub final_theta: ModelParams,
    pub final_omega: Vec<f64>,
    pub final_policies: Vec<PolicyParams>,
    pub events: Vec<SimEvent>,
    pub theta_star: ModelParams,
    pub heldout_initial_loss: f64,
    pub heldout_initial_error: f64,
    pub heldout_final_loss: f64,
    pub heldout_final_error: f64,
}

impl SimOutput {
    /// Records of agent `i` in round order.
    pub fn agent_history(&self, i: usize) -> Vec<AgentRoundRecord> {
        self.agent_records.iter().map(|r| r[i].clone()).collect()
    }
}

/// The fixed held-out set used for `Ĵ`, drawn before round 0.
pub fn heldout_set(dist: &GlobalDistribution, size: usize, seed: u64) -> Batch {
    let mut rng = rng::stream(seed, Entity::Environment, Purpose::HeldOut);
    (0..size)
        .map(|_| gen_global_sample(dist, &mut rng))
        .collect()
}

pub fn run_simulation(config: &ExperimentConfig) -> Result<SimOutput> {
    run_simulation_with(config, &mut ())
}

pub fn run_simulation_with<O: RoundObserver + ?Sized>(
    config: &ExperimentConfig,
    observer: &mut O,
) -> Result<SimOutput> {
    config.validate()?;
    let n = config.n_agents();
    let seed = config.seed;
    let global = GlobalDistribution::from_seed(&config.data, config.dim, seed);
    let heldout = heldout_set(&global, config.data.heldout_size, seed);
    let mut data_rngs: Vec<StreamRng> = (0..n)
        .map(|i| rng::stream(seed, Entity::Agent(i), Purpose::Data))
        .collect();
    let mut agents = config
        .agents
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            Agent::new(
                i,
                spec.agent.clone(),
                config.loss,
                config.dim,
                config.rounds,
                seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut arbiter = Arbiter::new(
        config.arbiter.clone(),
        config.loss,
        n,
        config.dim,
        config.rounds,
        seed,
    )?;

    let theta0 = arbiter.theta().clone();
    let heldout_initial_loss = model::mean_loss(&theta0, &heldout, &config.loss)?;
    let heldout_initial_error = model::error_rate(&theta0, &heldout)?;

    let mut rows = Vec::with_capacity(config.rounds);
    let mut agent_records = Vec::with_capacity(config.rounds);
    let mut arbiter_records = Vec::with_capacity(config.rounds);
    let mut events = Vec::new();
    let (mut last_loss, mut last_error) = (heldout_initial_loss, heldout_initial_error);

    for t in 0..config.rounds {
        let mut submissions = Vec::with_capacity(n);
        let mut contributions = Vec::with_capacity(n);
        for (i, agent) in agents.iter_mut().enumerate() {
            let fresh = gen_agent_batch(&config.agents[i].distribution, &global, &mut data_rngs[i]);
            match agent.share(fresh) {
                Ok(sub) => {
                    contributions.push(RoundContribution {
                        agent_id: i,
                        batch: sub.shared.clone(),
                    });
                    submissions.push(Ok(sub));
                }
                Err(e) => {
                    let msg = e.to_string();
                    events.push(SimEvent {
                        t,
                        agent: Some(i),
                        message: format!("nothing shared: {msg}"),
                    });
                    submissions.push(Err(msg));
                }
            }
        }

        let (models, arec) = arbiter.round(&contributions)?;
        for (i, reason) in arec.excluded.iter().enumerate() {
            if let Some(reason) = reason {
                if submissions[i].is_ok() {
                    events.push(SimEvent {
                        t,
                        agent: Some(i),
                        message: format!("left out of the arbiter round: {reason}"),
                    });
                }
            }
        }

        let mut records = Vec::with_capacity(n);
        for ((agent, sub), model) in agents.iter_mut().zip(submissions).zip(&models) {
            let rec = match sub {
                Ok(sub) => agent.complete(sub, model),
                Err(reason) => agent.skip(t, reason, model),
            };
            if let (Some(reason), Some(_)) = (&rec.skipped, rec.chosen_strategy) {
                events.push(SimEvent {
                    t,
                    agent: Some(agent.id),
                    message: format!("policy update skipped: {reason}"),
                });
            }
            records.push(rec);
        }

        let theta = arbiter.theta();
        last_loss = model::mean_loss(theta, &heldout, &config.loss)?;
        last_error = model::error_rate(theta, &heldout)?;
        rows.push(MetricsRow {
            t,
            agents: records
                .iter()
                .enumerate()
                .map(|(i, r)| AgentMetrics {
                    strategy: r.chosen_strategy,
                    eval: r.eval_value,
                    grad_sq: r.estimator_norm_sq(),
                    weight: arec.weights[i],
                    radius: arec.radii[i],
                })
                .collect(),
            train_loss: arec.weighted_train_loss,
            grad_l_sq: arec.mean_grad_l_sq(),
            omega_norm: math::norm(&arec.omega),
            heldout_loss: last_loss,
            heldout_error: last_error,
        });

        observer.on_round(&RoundView {
            t,
            contributions: &contributions,
            models: &models,
            agents: &agents,
            arbiter: &arbiter,
            agent_records: &records,
            arbiter_record: &arec,
        });
        agent_records.push(records);
        arbiter_records.push(arec);
    }

    Ok(SimOutput {
        rows,
        agent_records,
        arbiter_records,
        final_theta: arbiter.theta().clone(),
        final_omega: arbiter.omega().0.clone(),
        final_policies: agents.iter().map(|a| a.policy().clone()).collect(),
        events,
        theta_star: global.theta_star,
        heldout_initial_loss,
        heldout_initial_error,
        heldout_final_loss: last_loss,
        heldout_final_error: last_error,
    })
}
