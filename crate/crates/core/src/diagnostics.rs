//! Numerical checks of the analytical apparatus: assumption constants, the
//! gradient and Hessian formulas against finite differences, the weight-map
//! and strong-convexity properties, stationarity metrics, and calculators for
//! the agent and arbiter convergence bounds.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::agent::AgentRoundRecord;
use crate::arbiter::{self, ArbiterConfig, ArbiterRoundRecord};
use crate::distortion::{DistortionFn, DistortionKind};
use crate::math::{self, Matrix};
use crate::model::{self, Batch, LossConfig, ModelParams, Sample};
use crate::noise::ball_sample;
use crate::policy::{self, LogHessianForm, PolicyParams};
use crate::rng::{self, Entity, Purpose};
use crate::schedule::StepSchedule;
use crate::sim::{
    gen_agent_batch, gen_global_sample, run_simulation_with, ExperimentConfig, GlobalDistribution,
    RoundObserver, RoundView, SimOutput,
};
use crate::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error in [`finite_diff`].
pub const FD_REL_FLOOR: f64 = 1e-3;
pub const GRAD_TOL: f64 = 1e-6;
pub const HESSIAN_TOL: f64 = 1e-5;
pub const IDENTITY_TOL: f64 = 1e-10;
pub const LIPSCHITZ_SLACK: f64 = 1e-12;

/// Constants of the standing assumptions, evaluated for a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionConstants {
    /// Bound on `‖∇l‖`.
    pub l_l: f64,
    /// Bound on `‖∇²l‖`.
    pub l_l_prime: f64,
    /// Bound on the arbiter evaluation `m`.
    pub m_m: f64,
    /// Bound on `‖∇m‖`.
    pub l_m: f64,
    /// Bound on the agent evaluation.
    pub m_m_agent: f64,
    /// Bound on `‖∇ log π‖`.
    pub m_d_agent: f64,
    /// Bound on `‖∇² log π‖`.
    pub m_h_agent: f64,
    /// Norm of the fixed point of the weight recursion (estimated).
    pub m_omega_star: f64,
    pub lambda_omega: f64,
    pub n_agents: usize,
    pub inner_batches: usize,
    pub train_fraction: f64,
}

impl AssumptionConstants {
    pub fn analytic(
        loss: &LossConfig,
        x_max: f64,
        n_agents: usize,
        arbiter: &ArbiterConfig,
        m_omega_star: f64,
    ) -> Self {
        let w = loss.max_weight();
        AssumptionConstants {
            l_l: w * x_max,
            l_l_prime: w * x_max * x_max / 4.0,
            m_m: 1.0,
            l_m: x_max / 16.0,
            m_m_agent: 1.0,
            m_d_agent: math::sqrt(2.0),
            m_h_agent: 2.0,
            m_omega_star,
            lambda_omega: arbiter.lambda_omega,
            n_agents,
            inner_batches: arbiter.inner_batches,
            train_fraction: arbiter.train_fraction,
        }
    }

    pub fn for_config(cfg: &ExperimentConfig, m_omega_star: f64) -> Self {
        Self::analytic(
            &cfg.loss,
            cfg.data.x_max,
            cfg.n_agents(),
            &cfg.arbiter,
            m_omega_star,
        )
    }

    /// `M_m^i² M_d^i²`, the bound on the squared policy-gradient estimator.
    pub fn estimator_bound(&self) -> f64 {
        let (m, d) = (self.m_m_agent, self.m_d_agent);
        m * m * d * d
    }
}

/// `∇G(ν) = Σ_s π(s) m_s ∇ log π(s)` summed over every strategy, written as
/// `π_j (m_j - Σ_s π(s) m_s)`.
pub fn exhaustive_policy_grad(eval_table: &[f64], nu: &[f64]) -> Result<Vec<f64>> {
    math::check_dim(nu.len(), eval_table.len())?;
    let pi = policy::policy_probs(nu);
    let g: f64 = pi.iter().zip(eval_table).map(|(p, m)| p * m).sum();
    Ok(pi
        .iter()
        .zip(eval_table)
        .map(|(p, m)| p * (m - g))
        .collect())
}

/// `G(ν) = Σ_s π(s) m_s`
pub fn expected_eval(eval_table: &[f64], nu: &[f64]) -> f64 {
    policy::policy_probs(nu)
        .iter()
        .zip(eval_table)
        .map(|(p, m)| p * m)
        .sum()
}

/// Worst per-coordinate relative error between `grad_fn(point)` and a central
/// difference of `scalar_fn`. The denominator is floored at
/// [`FD_REL_FLOOR`] so near-zero components are compared absolutely.
pub fn finite_diff<G, F>(grad_fn: G, scalar_fn: F, point: &[f64], h_step: f64) -> Result<f64>
where
    G: Fn(&[f64]) -> Vec<f64>,
    F: Fn(&[f64]) -> f64,
{
    if !(1e-7..=1e-3).contains(&h_step) {
        return Err(Error::OutOfRange {
            what: "finite-difference step",
            value: h_step,
            range: "[1e-7, 1e-3]",
        });
    }
    let analytic = grad_fn(point);
    math::check_dim(point.len(), analytic.len())?;
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for j in 0..point.len() {
        x[j] = point[j] + h_step;
        let up = scalar_fn(&x);
        x[j] = point[j] - h_step;
        let down = scalar_fn(&x);
        x[j] = point[j];
        let numeric = (up - down) / (2.0 * h_step);
        if !numeric.is_finite() || !analytic[j].is_finite() {
            return Err(Error::NonFinite("finite-difference evaluation"));
        }
        worst = worst.max((numeric - analytic[j]).abs() / analytic[j].abs().max(FD_REL_FLOOR));
    }
    Ok(worst)
}

/// Result of a sampled property check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOutcome {
    pub passed: bool,
    /// Largest violation measure seen (meaning depends on the check).
    pub worst: f64,
    pub samples: usize,
}

fn gaussian_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// `|⟨∇̂M(ω1) - ∇̂M(ω2), ω1 - ω2⟩ - λ‖ω1 - ω2‖²|` over random pairs at fixed
/// `θ` and data.
pub fn check_strong_convexity<R: Rng + ?Sized>(
    theta: &[f64],
    val_batches: &[&Batch],
    lambda_omega: f64,
    n_pairs: usize,
    rng: &mut R,
) -> Result<CheckOutcome> {
    let n = val_batches.len();
    let mut worst = 0.0f64;
    for _ in 0..n_pairs {
        let w1 = gaussian_vec(n, rng);
        let w2 = gaussian_vec(n, rng);
        let g1 = arbiter::grad_m_hat(theta, &w1, val_batches, lambda_omega)?;
        let g2 = arbiter::grad_m_hat(theta, &w2, val_batches, lambda_omega)?;
        let dw = math::sub(&w1, &w2);
        let lhs = math::dot(&math::sub(&g1, &g2), &dw);
        worst = worst.max((lhs - lambda_omega * math::norm_sq(&dw)).abs());
    }
    Ok(CheckOutcome {
        passed: worst <= IDENTITY_TOL,
        worst,
        samples: n_pairs,
    })
}

/// The same identity on recorded rounds: the recorded `∇̂M` at `ω_t` is paired
/// with `∇̂M` at `ω = 0` (the recorded mean evaluations), using the recorded
/// `λ_ω`.
pub fn check_strong_convexity_records(records: &[ArbiterRoundRecord]) -> Result<CheckOutcome> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut worst = 0.0f64;
    let mut samples = 0;
    for r in records {
        let mut lhs = 0.0;
        let mut sq = 0.0;
        for i in 0..r.omega_before.len() {
            if let (Some(g), Some(m)) = (r.grad_m[i], r.mean_evals[i]) {
                lhs += (g - m) * r.omega_before[i];
                sq += r.omega_before[i] * r.omega_before[i];
            }
        }
        worst = worst.max((lhs - r.lambda_omega * sq).abs());
        samples += 1;
    }
    Ok(CheckOutcome {
        passed: worst <= IDENTITY_TOL,
        worst,
        samples,
    })
}

/// Largest `‖h(ω1) - h(ω2)‖ / ‖ω1 - ω2‖` over standard-normal pairs.
pub fn check_h_lipschitz<R: Rng + ?Sized>(
    n_agents: usize,
    n_pairs: usize,
    rng: &mut R,
) -> CheckOutcome {
    let mut worst = 0.0f64;
    for _ in 0..n_pairs {
        let w1 = gaussian_vec(n_agents, rng);
        let w2 = gaussian_vec(n_agents, rng);
        worst = worst.max(h_ratio(&w1, &w2));
    }
    CheckOutcome {
        passed: worst <= 1.0 + LIPSCHITZ_SLACK,
        worst,
        samples: n_pairs,
    }
}

/// `‖h(ω1) - h(ω2)‖ / ‖ω1 - ω2‖`, 0 for coincident points.
pub fn h_ratio(w1: &[f64], w2: &[f64]) -> f64 {
    let den = math::distance(w1, w2);
    if den == 0.0 {
        return 0.0;
    }
    math::distance(&arbiter::agent_weights(w1), &arbiter::agent_weights(w2)) / den
}

/// Empirical mean of a squared gradient norm under uniform iterate sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarityReport {
    pub mean_sq: f64,
    pub samples: usize,
    /// True when some values are estimator norms rather than exact gradients.
    pub proxy: bool,
    pub rhs: Option<f64>,
    pub satisfied: Option<bool>,
}

impl StationarityReport {
    pub fn with_rhs(mut self, rhs: f64) -> Self {
        self.rhs = Some(rhs);
        self.satisfied = Some(self.mean_sq <= rhs);
        self
    }
}

/// Uniform `R` over rounds. Rounds with an eval table use the exact `∇G` at
/// the round's policy; other rounds fall back to the estimator norm.
pub fn agent_stationarity(records: &[AgentRoundRecord]) -> Result<StationarityReport> {
    let mut values = Vec::with_capacity(records.len());
    let mut proxy = false;
    for r in records {
        if let Some(table) = &r.eval_table {
            values.push(math::norm_sq(&exhaustive_policy_grad(
                table,
                &r.policy_snapshot,
            )?));
        } else if let Some(sq) = r.estimator_norm_sq() {
            values.push(sq);
            proxy = true;
        }
    }
    report(&values, proxy)
}

/// Uniform `(R1, R2)` over rounds and inner steps of `‖∇̂L(θ_{t,k})‖²`.
pub fn arbiter_stationarity(records: &[ArbiterRoundRecord]) -> Result<StationarityReport> {
    let values: Vec<f64> = records
        .iter()
        .flat_map(|r| r.grad_l_sq.iter().copied())
        .collect();
    report(&values, false)
}

fn report(values: &[f64], proxy: bool) -> Result<StationarityReport> {
    let mean_sq = math::mean(values).ok_or(Error::EmptyRecords)?;
    Ok(StationarityReport {
        mean_sq,
        samples: values.len(),
        proxy,
        rhs: None,
        satisfied: None,
    })
}

/// Which iterates a stationarity metric is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Agent(usize),
    Arbiter,
}

/// `agent_records[t][i]` as produced by a run.
pub fn stationarity_metric(
    agent_records: &[Vec<AgentRoundRecord>],
    arbiter_records: &[ArbiterRoundRecord],
    which: Target,
) -> Result<StationarityReport> {
    match which {
        Target::Agent(i) => {
            let history: Vec<AgentRoundRecord> = agent_records
                .iter()
                .filter_map(|r| r.get(i).cloned())
                .collect();
            agent_stationarity(&history)
        }
        Target::Arbiter => arbiter_stationarity(arbiter_records),
    }
}

/// `gap/√T + (M_h + M_d²) M_m³ M_d² / (2√T)`
pub fn theorem1_rhs(c: &AssumptionConstants, gap: f64, horizon: usize) -> f64 {
    let sqrt_t = math::sqrt(horizon.max(1) as f64);
    let (mm, md, mh) = (c.m_m_agent, c.m_d_agent, c.m_h_agent);
    gap / sqrt_t + (mh + md * md) * mm * mm * mm * md * md / (2.0 * sqrt_t)
}

/// The arbiter bound with every term broken out.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem2Bound {
    /// `A_1 … A_10`
    pub a: [f64; 10],
    pub gap_term: f64,
    /// `(A1/T^{4/5} + A2/T^{2/5}) Σ E[1/⌊(1-p)|D^i|⌋]`
    pub data_term: f64,
    /// `A3 Σ E[1/⌊(1-p)|D^i|⌋]`, which does not vanish with `T`.
    pub floor: f64,
    /// `A4/T^{2/5} + … + A10/T²`
    pub tail: f64,
    pub rhs: f64,
}

pub fn theorem2_coefficients(c: &AssumptionConstants) -> [f64; 10] {
    let n = c.n_agents as f64;
    let nb = c.inner_batches as f64;
    let l = c.lambda_omega;
    let (ll, llp, mm, lm, mw) = (c.l_l, c.l_l_prime, c.m_m, c.l_m, c.m_omega_star);
    let (ll2, ll4, ll6) = (ll * ll, math::powi(ll, 4), math::powi(ll, 6));
    let (mm2, lm2, mw2) = (mm * mm, lm * lm, mw * mw);
    let e = core::f64::consts::E;
    [
        196.0 * n * ll2 * mm2 / l,
        84.0 * n * ll2 * mm2 / (l * l),
        32.0 * ll2 / math::powi(l, 3) * (7.0 * n * mm2 + math::powi(l, 3) * e * e * nb),
        7.0 * ll2
            * n
            * (7.0 * ll2 * lm2 * n * n * nb * nb
                + 6.0 * math::powi(l, 3) * (mm2 * n + l * l * mw2))
            / math::powi(l, 5),
        7.0 * n * ll2 * mw2 / (l * l),
        7.0 * n * n * nb * ll4 * (l * l * llp + 2.0 * lm2 * n * nb) / (2.0 * math::powi(l, 4))
            + 98.0 * ll2 * n * (mm2 * n + 28.0 * l * l * mw2) / l,
        119.0 * math::powi(n, 3) * nb * nb * ll4 * lm2 / math::powi(l, 3),
        49.0 * math::powi(n, 4) * nb * nb * ll6 * lm2 * (1.0 + nb) / (4.0 * math::powi(l, 4)),
        21.0 * math::powi(n, 3) * nb * nb * ll4 * lm2 / (l * l),
        49.0 * math::powi(n, 3) * nb * nb * ll4 * lm2 / l,
    ]
}

/// `inv_val_sum` is `Σ_i E[1/⌊(1-p)|D^i|⌋]`.
pub fn theorem2_rhs(
    c: &AssumptionConstants,
    gap: f64,
    horizon: usize,
    inv_val_sum: f64,
) -> Theorem2Bound {
    let a = theorem2_coefficients(c);
    let t = horizon.max(1) as f64;
    let tp = |num: f64| math::powf(t, -num / 5.0);
    let gap_term = 2.0 * gap * tp(2.0) / c.inner_batches as f64;
    let data_term = (a[0] * tp(4.0) + a[1] * tp(2.0)) * inv_val_sum;
    let floor = a[2] * inv_val_sum;
    let tail = a[3] * tp(2.0)
        + a[4] * tp(3.0)
        + a[5] * tp(4.0)
        + a[6] * tp(6.0)
        + a[7] * tp(7.0)
        + a[8] * tp(8.0)
        + a[9] * tp(10.0);
    Theorem2Bound {
        a,
        gap_term,
        data_term,
        floor,
        tail,
        rhs: gap_term + data_term + floor + tail,
    }
}

/// `Σ_i mean_t 1/⌊(1-p)|D_t^i|⌋` from recorded shared sizes. A floor of zero
/// falls back to the realized validation size; rounds where the agent was left
/// out are skipped.
pub fn inverse_val_size_sum(records: &[ArbiterRoundRecord], p: f64) -> f64 {
    let n = records.first().map_or(0, |r| r.shared_sizes.len());
    (0..n)
        .filter_map(|i| {
            let inv: Vec<f64> = records
                .iter()
                .filter(|r| r.excluded[i].is_none())
                .map(|r| {
                    let f = math::floor((1.0 - p) * r.shared_sizes[i] as f64) as usize;
                    let denom = if f > 0 { f } else { r.val_sizes[i].max(1) };
                    1.0 / denom as f64
                })
                .collect();
            math::mean(&inv)
        })
        .sum()
}

/// Runs `ω ← ω - β(m̄ + λω)` from zero to its fixed point `-m̄/λ`.
pub fn estimate_omega_star(mean_evals: &[f64], lambda_omega: f64, beta: f64) -> Vec<f64> {
    let mut w = vec![0.0; mean_evals.len()];
    for _ in 0..1_000_000 {
        let mut change = 0.0f64;
        for (wi, m) in w.iter_mut().zip(mean_evals) {
            let step = beta * (m + lambda_omega * *wi);
            *wi -= step;
            change = change.max(step.abs());
        }
        if change < 1e-14 {
            break;
        }
    }
    w
}

/// `‖ω*‖` at frozen `θ`, from `samples_per_agent` draws of every agent's law.
pub fn estimate_m_omega_star(
    cfg: &ExperimentConfig,
    theta: &[f64],
    samples_per_agent: usize,
) -> Result<f64> {
    let global = GlobalDistribution::from_seed(&cfg.data, cfg.dim, cfg.seed);
    let mut means = Vec::with_capacity(cfg.n_agents());
    for (i, spec) in cfg.agents.iter().enumerate() {
        // the simulator never reads audit streams, so these draws are fresh
        let mut r = rng::stream(cfg.seed, Entity::Agent(i), Purpose::Audit);
        let mut total = 0.0;
        let mut count = 0usize;
        while count < samples_per_agent {
            let b = gen_agent_batch(&spec.distribution, &global, &mut r);
            for s in b.iter().take(samples_per_agent - count) {
                total += model::arbiter_eval_m(theta, s)?;
                count += 1;
            }
        }
        means.push(total / count.max(1) as f64);
    }
    let beta = cfg.arbiter.beta.step(cfg.rounds).min(1.0);
    Ok(math::norm(&estimate_omega_star(
        &means,
        cfg.arbiter.lambda_omega,
        beta,
    )))
}

/// Policy learning against a fixed per-strategy evaluation table; the arbiter
/// and data are out of the loop, so every round's `∇G` is exact.
pub fn frozen_policy_run(
    eval_table: &[f64],
    horizon: usize,
    step: StepSchedule,
    seed: u64,
) -> Result<Vec<AgentRoundRecord>> {
    step.validate("policy_step")?;
    let mut rng = rng::stream(seed, Entity::Diagnostics, Purpose::Policy);
    let mut nu = PolicyParams::uniform(eval_table.len());
    let b = step.step(horizon);
    let mut out = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let s = policy::policy_sample(&nu, &mut rng);
        let m = eval_table[s];
        let est = policy::grad_estimate(m, &nu, s)?;
        let next = policy::policy_update(&nu, &est, b)?;
        out.push(AgentRoundRecord {
            t,
            chosen_strategy: Some(s),
            estimator: Some(est),
            eval_value: Some(m),
            policy_snapshot: nu,
            step: b,
            eval_table: Some(eval_table.to_vec()),
            skipped: None,
        });
        nu = next;
    }
    Ok(out)
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    /// The property being tested, in words.
    pub anchor: &'static str,
    /// Reported-only lines never fail a report.
    pub asserted: bool,
    pub passed: bool,
    pub value: f64,
    pub bound: f64,
    pub detail: String,
}

impl CheckLine {
    fn assert(name: &str, anchor: &'static str, passed: bool, value: f64, bound: f64) -> Self {
        CheckLine {
            name: name.into(),
            anchor,
            asserted: true,
            passed,
            value,
            bound,
            detail: String::new(),
        }
    }

    fn le(name: &str, anchor: &'static str, value: f64, bound: f64) -> Self {
        Self::assert(name, anchor, value <= bound, value, bound)
    }

    fn info(name: &str, anchor: &'static str, value: f64, bound: f64) -> Self {
        CheckLine {
            asserted: false,
            passed: true,
            ..Self::assert(name, anchor, true, value, bound)
        }
    }

    fn detail(mut self, detail: String) -> Self {
        self.detail = detail;
        self
    }
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match (self.asserted, self.passed) {
            (false, _) => "INFO",
            (true, true) => "PASS",
            (true, false) => "FAIL",
        };
        write!(
            f,
            "{tag} {}: value={:.6e} bound={:.6e} [{}]",
            self.name, self.value, self.bound, self.anchor
        )?;
        if !self.detail.is_empty() {
            write!(f, " {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerificationReport {
    pub lines: Vec<CheckLine>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| !l.asserted || l.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckLine> {
        self.lines.iter().filter(|l| l.asserted && !l.passed)
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}

/// Tracks the largest runtime value of every quantity an assumption bounds.
#[derive(Debug, Clone)]
pub struct AssumptionAudit {
    pub constants: AssumptionConstants,
    loss: LossConfig,
    pub max_grad_l: f64,
    pub max_hessian_l: f64,
    pub min_m: f64,
    pub max_m: f64,
    pub max_grad_m: f64,
    pub max_agent_eval: f64,
    pub max_log_grad: f64,
    pub max_log_hessian: f64,
    pub max_omega_norm: f64,
    pub samples: usize,
    error: Option<Error>,
}

impl AssumptionAudit {
    pub fn new(constants: AssumptionConstants, loss: LossConfig) -> Self {
        AssumptionAudit {
            constants,
            loss,
            max_grad_l: 0.0,
            max_hessian_l: 0.0,
            min_m: f64::INFINITY,
            max_m: f64::NEG_INFINITY,
            max_grad_m: 0.0,
            max_agent_eval: 0.0,
            max_log_grad: 0.0,
            max_log_hessian: 0.0,
            max_omega_norm: 0.0,
            samples: 0,
            error: None,
        }
    }

    fn observe(&mut self, view: &RoundView<'_>) -> Result<()> {
        let rec = view.arbiter_record;
        let theta_next = rec.theta();
        for c in view.contributions {
            for s in c.batch.iter() {
                for theta in &rec.theta_trajectory {
                    let g = model::loss_grad(theta, s, &self.loss)?;
                    self.max_grad_l = self.max_grad_l.max(math::norm(&g));
                }
                let h = model::loss_hessian(&rec.theta_trajectory[0], s, &self.loss)?;
                self.max_hessian_l = self.max_hessian_l.max(h.spectral_norm_symmetric());
                let m = model::arbiter_eval_m(theta_next, s)?;
                self.min_m = self.min_m.min(m);
                self.max_m = self.max_m.max(m);
                let gm = model::arbiter_eval_m_grad(theta_next, s)?;
                self.max_grad_m = self.max_grad_m.max(math::norm(&gm));
                self.samples += 1;
            }
        }
        for r in view.agent_records {
            if let Some(e) = r.eval_value {
                self.max_agent_eval = self.max_agent_eval.max(e.abs());
            }
            let nu = &r.policy_snapshot;
            for s in 0..nu.n_strategies() {
                let g = policy::policy_log_grad(nu, s)?;
                self.max_log_grad = self.max_log_grad.max(math::norm(&g));
            }
            let h = policy::policy_log_hessian(nu, 0)?;
            self.max_log_hessian = self.max_log_hessian.max(h.spectral_norm_symmetric());
        }
        self.max_omega_norm = self.max_omega_norm.max(math::norm(&rec.omega));
        Ok(())
    }

    pub fn lines(&self) -> Result<Vec<CheckLine>> {
        if let Some(e) = &self.error {
            return Err(e.clone());
        }
        let c = &self.constants;
        let detail = format!("over {} shared samples", self.samples);
        Ok(vec![
            CheckLine::le(
                "loss gradient norm",
                "loss gradient bound",
                self.max_grad_l,
                c.l_l,
            )
            .detail(detail.clone()),
            CheckLine::le(
                "loss Hessian norm",
                "loss smoothness bound",
                self.max_hessian_l,
                c.l_l_prime,
            )
            .detail(detail.clone()),
            CheckLine::assert(
                "arbiter evaluation range",
                "arbiter evaluation bound",
                self.min_m >= 0.0 && self.max_m <= c.m_m,
                self.max_m,
                c.m_m,
            )
            .detail(format!("min={:.6e}", self.min_m)),
            CheckLine::le(
                "arbiter evaluation gradient norm",
                "evaluation gradient bound",
                self.max_grad_m,
                c.l_m,
            )
            .detail(detail),
            CheckLine::le(
                "agent evaluation",
                "agent evaluation bound",
                self.max_agent_eval,
                c.m_m_agent,
            ),
            CheckLine::le(
                "policy log-gradient norm",
                "score bound",
                self.max_log_grad,
                c.m_d_agent,
            ),
            CheckLine::le(
                "policy log-Hessian norm",
                "score smoothness bound",
                self.max_log_hessian,
                c.m_h_agent,
            ),
            CheckLine::info(
                "weight logits norm",
                "weight fixed-point bound",
                self.max_omega_norm,
                c.m_omega_star,
            ),
        ])
    }
}

impl RoundObserver for AssumptionAudit {
    fn on_round(&mut self, view: &RoundView<'_>) {
        if self.error.is_none() {
            if let Err(e) = self.observe(view) {
                self.error = Some(e);
            }
        }
    }
}

fn random_sample<R: Rng + ?Sized>(d: usize, x_max: f64, rng: &mut R) -> Sample {
    Sample {
        x: ball_sample(x_max, d, rng),
        y: u8::from(rng.random::<bool>()),
    }
}

fn matrix_row(m: &Matrix, j: usize) -> Vec<f64> {
    m.row(j).to_vec()
}

/// Checks that need no run: derivative formulas against finite differences,
/// estimator unbiasedness, weight-map Lipschitzness, strong convexity of the
/// weight objective, the distortion contract, and the agent bound on a frozen
/// environment.
pub fn pure_checks(seed: u64, dim: usize, x_max: f64, n_agents: usize) -> Result<Vec<CheckLine>> {
    let mut rng = rng::stream(seed, Entity::Diagnostics, Purpose::Audit);
    let points = 50;
    let mut lines = Vec::new();

    let (mut w_grad, mut w_hess, mut w_m) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..points {
        let theta = gaussian_vec(dim, &mut rng);
        let s = random_sample(dim, x_max, &mut rng);
        let cfg = LossConfig::new(rng.random_range(0.05..0.95))?;
        let l = |th: &[f64]| model::loss(th, &s, &cfg).unwrap_or(f64::NAN);
        let g = |th: &[f64]| model::loss_grad(th, &s, &cfg).unwrap_or_default();
        w_grad = w_grad.max(finite_diff(g, l, &theta, FD_STEP)?);
        for j in 0..dim {
            let row = |th: &[f64]| {
                model::loss_hessian(th, &s, &cfg).map_or_else(|_| Vec::new(), |h| matrix_row(&h, j))
            };
            let gj = |th: &[f64]| model::loss_grad(th, &s, &cfg).map_or(f64::NAN, |g| g[j]);
            w_hess = w_hess.max(finite_diff(row, gj, &theta, FD_STEP)?);
        }
        let m = |th: &[f64]| model::arbiter_eval_m(th, &s).unwrap_or(f64::NAN);
        let gm = |th: &[f64]| model::arbiter_eval_m_grad(th, &s).unwrap_or_default();
        w_m = w_m.max(finite_diff(gm, m, &theta, FD_STEP)?);
    }
    let pts = format!("{points} points");
    lines.push(
        CheckLine::le(
            "loss gradient vs finite differences",
            "loss gradient formula",
            w_grad,
            GRAD_TOL,
        )
        .detail(pts.clone()),
    );
    lines.push(
        CheckLine::le(
            "loss Hessian vs finite differences",
            "loss Hessian formula",
            w_hess,
            HESSIAN_TOL,
        )
        .detail(pts.clone()),
    );
    lines.push(
        CheckLine::le(
            "evaluation gradient vs finite differences",
            "evaluation gradient formula",
            w_m,
            GRAD_TOL,
        )
        .detail(pts.clone()),
    );

    let (mut w_lg, mut w_lh, mut w_printed) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..points {
        let k = rng.random_range(2..=6);
        let nu = gaussian_vec(k, &mut rng);
        let s = rng.random_range(0..k);
        let lp = |v: &[f64]| math::ln(policy::policy_probs(v)[s]);
        let lg = |v: &[f64]| policy::policy_log_grad(v, s).unwrap_or_default();
        w_lg = w_lg.max(finite_diff(lg, lp, &nu, FD_STEP)?);
        for j in 0..k {
            let gj = |v: &[f64]| policy::policy_log_grad(v, s).map_or(f64::NAN, |g| g[j]);
            let exact = |v: &[f64]| {
                policy::policy_log_hessian_form(v, s, LogHessianForm::Exact)
                    .map_or_else(|_| Vec::new(), |h| matrix_row(&h, j))
            };
            let printed = |v: &[f64]| {
                policy::policy_log_hessian_form(v, s, LogHessianForm::PrintedVariant)
                    .map_or_else(|_| Vec::new(), |h| matrix_row(&h, j))
            };
            w_lh = w_lh.max(finite_diff(exact, gj, &nu, FD_STEP)?);
            w_printed = w_printed.max(finite_diff(printed, gj, &nu, FD_STEP)?);
        }
    }
    lines.push(
        CheckLine::le(
            "policy log-gradient vs finite differences",
            "score formula",
            w_lg,
            GRAD_TOL,
        )
        .detail(pts.clone()),
    );
    lines.push(
        CheckLine::le(
            "policy log-Hessian vs finite differences",
            "score Jacobian, -diag(pi) + pi pi^T",
            w_lh,
            HESSIAN_TOL,
        )
        .detail(pts),
    );
    lines.push(CheckLine::info(
        "printed log-Hessian sign variant vs finite differences",
        "score Jacobian, -diag(pi) - pi pi^T",
        w_printed,
        HESSIAN_TOL,
    ));

    let mut w_bias = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(1..=6);
        let nu = gaussian_vec(k, &mut rng);
        let table: Vec<f64> = (0..k).map(|_| rng.random()).collect();
        let pi = policy::policy_probs(&nu);
        let mut mean = vec![0.0; k];
        for s in 0..k {
            math::axpy(pi[s], &policy::grad_estimate(table[s], &nu, s)?, &mut mean);
        }
        let exact = exhaustive_policy_grad(&table, &nu)?;
        w_bias = w_bias.max(
            mean.iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
    }
    lines.push(
        CheckLine::le(
            "policy-gradient estimator bias",
            "estimator unbiasedness",
            w_bias,
            IDENTITY_TOL,
        )
        .detail("100 instances".into()),
    );

    let lip = check_h_lipschitz(n_agents.max(2), 1000, &mut rng);
    lines.push(
        CheckLine::le(
            "softmax weight Lipschitz ratio",
            "weight map is 1-Lipschitz",
            lip.worst,
            1.0 + LIPSCHITZ_SLACK,
        )
        .detail("1000 pairs".into()),
    );

    let theta = gaussian_vec(dim, &mut rng);
    let batches: Vec<Batch> = (0..n_agents.max(2))
        .map(|_| {
            (0..8)
                .map(|_| random_sample(dim, x_max, &mut rng))
                .collect()
        })
        .collect();
    let refs: Vec<&Batch> = batches.iter().collect();
    let lambda = rng.random_range(0.01..=0.5);
    let sc = check_strong_convexity(&theta, &refs, lambda, 1000, &mut rng)?;
    lines.push(
        CheckLine::le(
            "weight objective strong-convexity identity",
            "weight objective Hessian = lambda I",
            sc.worst,
            IDENTITY_TOL,
        )
        .detail("1000 pairs".into()),
    );

    let (ok, worst) = distortion_contract()?;
    lines.push(
        CheckLine::assert(
            "distortion endpoints and monotonicity",
            "distortion contract",
            ok,
            worst,
            1e-12,
        )
        .detail("5 kinds x 5 lambdas x 1001 points".into()),
    );

    let table = [0.1, 0.5, 0.9];
    let horizon = 400;
    let recs = frozen_policy_run(&table, horizon, StepSchedule::INV_SQRT_HORIZON, seed)?;
    let c = AssumptionConstants::analytic(
        &LossConfig::default(),
        x_max,
        n_agents,
        &ArbiterConfig::default(),
        0.0,
    );
    let rep = agent_stationarity(&recs)?.with_rhs(theorem1_rhs(&c, 1.0, horizon));
    lines.push(
        CheckLine::le(
            "frozen-environment agent stationarity",
            "agent convergence bound",
            rep.mean_sq,
            rep.rhs.unwrap_or(0.0),
        )
        .detail(format!("T={horizon}")),
    );
    Ok(lines)
}

/// The lambda grid used by the distortion contract for each kind.
pub fn distortion_lambdas(kind: DistortionKind) -> [f64; 5] {
    match kind {
        DistortionKind::Quadratic => [0.0, 0.25, 0.5, 0.75, 1.0],
        _ => [0.1, 0.5, 1.0, 5.0, 20.0],
    }
}

/// `g(0) = 0`, `g(1) = 1` and monotonicity on a 1001-point grid; returns the
/// worst endpoint error, or the largest decrease if monotonicity fails.
pub fn distortion_contract() -> Result<(bool, f64)> {
    let mut ok = true;
    let mut worst = 0.0f64;
    for kind in DistortionKind::ALL {
        for lambda in distortion_lambdas(kind) {
            let g = DistortionFn::new(kind, lambda)?;
            let end = g.eval(0.0)?.abs().max((g.eval(1.0)? - 1.0).abs());
            worst = worst.max(end);
            ok &= end <= 1e-12;
            let mut prev = g.eval(0.0)?;
            for k in 1..=1000 {
                let v = g.eval(k as f64 / 1000.0)?;
                if v < prev {
                    ok = false;
                    worst = worst.max(prev - v);
                }
                prev = v;
            }
        }
    }
    Ok((ok, worst))
}

/// Checks over recorded rounds: estimator bound and recomputation, noise radii
/// and norms, the weight step, the strong-convexity identity, and the
/// stationarity metrics with both convergence bounds.
pub fn record_checks(
    cfg: &ExperimentConfig,
    agent_records: &[Vec<AgentRoundRecord>],
    arbiter_records: &[ArbiterRoundRecord],
    constants: &AssumptionConstants,
    heldout_gap: Option<f64>,
) -> Result<Vec<CheckLine>> {
    if agent_records.is_empty() || arbiter_records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut lines = Vec::new();

    let mut max_est = 0.0f64;
    let mut recompute = 0.0f64;
    for r in agent_records.iter().flatten() {
        if let (Some(est), Some(m), Some(s)) = (&r.estimator, r.eval_value, r.chosen_strategy) {
            max_est = max_est.max(math::norm_sq(est));
            let again = policy::grad_estimate(m, &r.policy_snapshot, s)?;
            recompute = recompute.max(math::distance(est, &again));
        }
    }
    lines.push(CheckLine::le(
        "policy-gradient estimator squared norm",
        "estimator second-moment bound",
        max_est,
        constants.estimator_bound(),
    ));
    lines.push(CheckLine::le(
        "recorded estimators match recomputation",
        "estimator formula",
        recompute,
        IDENTITY_TOL,
    ));

    let g = cfg.arbiter.distortion;
    let rho = cfg.arbiter.noise_scale;
    let (mut radius_err, mut excess) = (0.0f64, f64::NEG_INFINITY);
    let (mut weight_err, mut step_err) = (0.0f64, 0.0f64);
    for r in arbiter_records {
        let radii = arbiter::noise_radii(&r.omega, &g, rho)?;
        for (i, eta) in r.noise.iter().enumerate() {
            radius_err = radius_err.max((radii[i] - r.radii[i]).abs());
            excess = excess.max(math::norm(eta) - radii[i]);
        }
        weight_err = weight_err.max(math::distance(
            &arbiter::agent_weights(&r.omega),
            &r.weights,
        ));
        for i in 0..r.omega.len() {
            let expected = match r.grad_m[i] {
                Some(gm) => r.omega_before[i] - r.beta * gm,
                None => r.omega_before[i],
            };
            step_err = step_err.max((expected - r.omega[i]).abs());
        }
    }
    lines.push(CheckLine::le(
        "noise radii match the distorted weights",
        "noise radius rho (1 - g(h))",
        radius_err,
        0.0,
    ));
    lines.push(CheckLine::le(
        "noise norm minus radius",
        "noise lies in its ball",
        excess,
        0.0,
    ));
    lines.push(CheckLine::le(
        "recorded weights match softmax of logits",
        "weight map",
        weight_err,
        IDENTITY_TOL,
    ));
    lines.push(CheckLine::le(
        "recorded weight step",
        "weight update",
        step_err,
        IDENTITY_TOL,
    ));

    let sc = check_strong_convexity_records(arbiter_records)?;
    lines.push(
        CheckLine::le(
            "recorded strong-convexity identity",
            "weight objective Hessian = lambda I",
            sc.worst,
            IDENTITY_TOL,
        )
        .detail(format!("{} rounds", sc.samples)),
    );

    let horizon = arbiter_records.len();
    for i in 0..cfg.n_agents() {
        if let Ok(rep) = stationarity_metric(agent_records, arbiter_records, Target::Agent(i)) {
            let rep = rep.with_rhs(theorem1_rhs(constants, 1.0, horizon));
            let line = CheckLine::info(
                &format!("agent {i} stationarity"),
                "agent convergence bound",
                rep.mean_sq,
                rep.rhs.unwrap_or(0.0),
            );
            lines.push(line.detail(format!(
                "samples={}{}",
                rep.samples,
                if rep.proxy {
                    " (estimator-norm proxy)"
                } else {
                    ""
                }
            )));
        }
    }
    let rep = arbiter_stationarity(arbiter_records)?;
    let gap = heldout_gap.unwrap_or(cfg.loss.max_weight() * core::f64::consts::LN_2);
    let inv = inverse_val_size_sum(arbiter_records, cfg.arbiter.train_fraction);
    let bound = theorem2_rhs(constants, gap, horizon, inv);
    let a: Vec<String> = bound
        .a
        .iter()
        .enumerate()
        .map(|(k, v)| format!("A{}={v:.3e}", k + 1))
        .collect();
    lines.push(
        CheckLine::info(
            "arbiter stationarity",
            "arbiter convergence bound",
            rep.mean_sq,
            bound.rhs,
        )
        .detail(format!(
            "samples={} floor={:.3e} {}",
            rep.samples,
            bound.floor,
            a.join(" ")
        )),
    );
    Ok(lines)
}

/// Mean of `‖∇J(θ_{t,k})‖²` with `J` estimated on a large sample of the global
/// law, checked against the arbiter bound.
pub fn strict_theorem2(
    cfg: &ExperimentConfig,
    arbiter_records: &[ArbiterRoundRecord],
    constants: &AssumptionConstants,
    oracle_size: usize,
) -> Result<CheckLine> {
    if arbiter_records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let global = GlobalDistribution::from_seed(&cfg.data, cfg.dim, cfg.seed);
    let mut r = rng::stream(cfg.seed, Entity::Diagnostics, Purpose::HeldOut);
    let oracle: Batch = (0..oracle_size)
        .map(|_| gen_global_sample(&global, &mut r))
        .collect();
    let mut values = Vec::new();
    for rec in arbiter_records {
        for theta in rec.theta_trajectory.iter().take(rec.grad_l_sq.len()) {
            values.push(math::norm_sq(&model::mean_loss_grad(
                theta, &oracle, &cfg.loss,
            )?));
        }
    }
    let mean = math::mean(&values).ok_or(Error::EmptyRecords)?;
    let theta0 = arbiter_records[0]
        .theta_trajectory
        .first()
        .cloned()
        .unwrap_or_default();
    let gap = model::mean_loss(&theta0, &oracle, &cfg.loss)?;
    let inv = inverse_val_size_sum(arbiter_records, cfg.arbiter.train_fraction);
    let bound = theorem2_rhs(constants, gap, arbiter_records.len(), inv);
    Ok(CheckLine::le(
        "arbiter stationarity on the population loss",
        "arbiter convergence bound",
        mean,
        bound.rhs,
    )
    .detail(format!("oracle samples={oracle_size}")))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub strict_theorem2: bool,
    /// Draws per agent for the weight fixed-point estimate.
    pub omega_star_samples: usize,
    pub oracle_size: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            strict_theorem2: false,
            omega_star_samples: 25_000,
            oracle_size: 20_000,
        }
    }
}

/// Full suite for a configuration: runs it with an [`AssumptionAudit`], then
/// adds the pure and record checks.
pub fn verify_config(
    cfg: &ExperimentConfig,
    opts: &VerifyOptions,
) -> Result<(SimOutput, VerificationReport)> {
    cfg.validate()?;
    let mut audit = AssumptionAudit::new(AssumptionConstants::for_config(cfg, 0.0), cfg.loss);
    let out = run_simulation_with(cfg, &mut audit)?;
    let m_star = estimate_m_omega_star(cfg, &out.final_theta, opts.omega_star_samples)?;
    audit.constants.m_omega_star = m_star;
    let constants = audit.constants.clone();
    let mut lines = pure_checks(cfg.seed, cfg.dim, cfg.data.x_max, cfg.n_agents())?;
    lines.extend(audit.lines()?);
    let gap = out.heldout_initial_loss;
    lines.extend(record_checks(
        cfg,
        &out.agent_records,
        &out.arbiter_records,
        &constants,
        Some(gap),
    )?);
    if opts.strict_theorem2 {
        lines.push(strict_theorem2(
            cfg,
            &out.arbiter_records,
            &constants,
            opts.oracle_size,
        )?);
    }
    Ok((out, VerificationReport { lines }))
}

/// Suite for stored records of a finished run.
pub fn verify_records(
    cfg: &ExperimentConfig,
    agent_records: &[Vec<AgentRoundRecord>],
    arbiter_records: &[ArbiterRoundRecord],
    final_theta: &ModelParams,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    if agent_records.is_empty() || arbiter_records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let m_star = estimate_m_omega_star(cfg, final_theta, opts.omega_star_samples)?;
    let constants = AssumptionConstants::for_config(cfg, m_star);
    let mut lines = pure_checks(cfg.seed, cfg.dim, cfg.data.x_max, cfg.n_agents())?;
    lines.extend(record_checks(
        cfg,
        agent_records,
        arbiter_records,
        &constants,
        None,
    )?);
    if opts.strict_theorem2 {
        lines.push(strict_theorem2(
            cfg,
            arbiter_records,
            &constants,
            opts.oracle_size,
        )?);
    }
    Ok(VerificationReport { lines })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exhaustive_grad_examples() {
        // a constant table has zero gradient
        let flat = exhaustive_policy_grad(&[0.4; 3], &[0.3, -1.0, 2.0]).unwrap();
        assert!(flat.iter().all(|v| v.abs() < 1e-16));
        let g = exhaustive_policy_grad(&[0.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!((g[0] + 0.25).abs() < 1e-15 && (g[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn theorem1_examples() {
        let c = AssumptionConstants::analytic(
            &LossConfig::default(),
            5.0,
            4,
            &ArbiterConfig::default(),
            0.0,
        );
        assert!((theorem1_rhs(&c, 1.0, 1) - 5.0).abs() < 1e-12);
        assert!((theorem1_rhs(&c, 1.0, 400) * 2.0 - theorem1_rhs(&c, 1.0, 100)).abs() < 1e-12);
    }

    #[test]
    fn a1_example() {
        let arb = ArbiterConfig {
            lambda_omega: 0.5,
            ..ArbiterConfig::default()
        };
        let mut c = AssumptionConstants::analytic(&LossConfig::default(), 2.0, 2, &arb, 0.0);
        c.l_l = 1.0;
        assert!((theorem2_coefficients(&c)[0] - 784.0).abs() < 1e-9);
    }

    #[test]
    fn omega_star_is_fixed_point() {
        let w = estimate_omega_star(&[0.2, 0.6], 0.1, 0.5);
        assert!((w[0] + 2.0).abs() < 1e-10 && (w[1] + 6.0).abs() < 1e-10);
    }

    #[test]
    fn finite_diff_affine_is_exact() {
        let dev = finite_diff(
            |_| vec![2.0, -3.0],
            |x| 2.0 * x[0] - 3.0 * x[1] + 1.0,
            &[0.3, 0.7],
            1e-4,
        )
        .unwrap();
        assert!(dev <= 1e-10);
        assert!(finite_diff(|_| vec![1.0], |x| x[0], &[0.0], 1e-2).is_err());
    }
}
