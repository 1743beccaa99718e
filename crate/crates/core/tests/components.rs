use cml_core::agent::{Agent, AgentConfig};
use cml_core::arbiter::{Arbiter, ArbiterConfig, RoundContribution};
use cml_core::model::{Batch, LossConfig, ModelParams, Sample};
use cml_core::rng::{stream, Entity, Purpose};
use cml_core::sim::{
    gen_agent_batch, gen_global_sample, run_simulation, AgentDistribution, AgentSpec, DataConfig,
    ExperimentConfig, GlobalDistribution,
};

fn zero_truth(dim: usize) -> GlobalDistribution {
    GlobalDistribution {
        theta_star: ModelParams::zeros(dim),
        x_max: 5.0,
        feature_std: 1.0,
    }
}

#[test]
fn zero_ground_truth_gives_fair_coin_labels() {
    let dist = zero_truth(3);
    let mut r = stream(1, Entity::Environment, Purpose::Data);
    let n = 100_000;
    let ones: usize = (0..n)
        .map(|_| usize::from(gen_global_sample(&dist, &mut r).y))
        .sum();
    let rate = ones as f64 / n as f64;
    // 4 standard errors of a Bernoulli(0.5) mean
    assert!(
        (rate - 0.5).abs() < 4.0 * 0.5 / (n as f64).sqrt(),
        "rate {rate}"
    );
}

#[test]
fn features_stay_in_the_ball() {
    let dist = GlobalDistribution {
        feature_std: 3.0,
        ..zero_truth(4)
    };
    let mut r = stream(2, Entity::Environment, Purpose::Data);
    for _ in 0..2000 {
        let s = gen_global_sample(&dist, &mut r);
        assert!(s.x.iter().map(|v| v * v).sum::<f64>().sqrt() <= 5.0 + 1e-12);
    }
}

#[test]
fn label_flip_rate_is_respected() {
    // with a huge ground truth the clean label is almost surely sign(θ*·x)
    let mut dist = zero_truth(2);
    dist.theta_star = ModelParams(vec![1e6, 0.0]);
    let agent = AgentDistribution {
        label_flip_rate: 0.1,
        batch_size: cml_core::sim::BatchSizeLaw::Fixed { size: 50_000 },
        ..AgentDistribution::default()
    };
    let mut r = stream(3, Entity::Agent(0), Purpose::Data);
    let batch = gen_agent_batch(&agent, &dist, &mut r);
    let flipped = batch
        .iter()
        .filter(|s| s.x[0] != 0.0 && s.y != u8::from(s.x[0] > 0.0))
        .count();
    let rate = flipped as f64 / batch.len() as f64;
    assert!((rate - 0.1).abs() <= 0.01, "rate {rate}");
}

#[test]
fn adversarial_agent_inverts_labels() {
    let mut dist = zero_truth(2);
    dist.theta_star = ModelParams(vec![1e6, 0.0]);
    let agent = AgentDistribution {
        adversarial: true,
        ..AgentDistribution::default()
    };
    let mut r = stream(4, Entity::Agent(0), Purpose::Data);
    let batch = gen_agent_batch(&agent, &dist, &mut r);
    assert!(batch.iter().all(|s| s.y == u8::from(s.x[0] < 0.0)));
}

#[test]
fn degenerate_single_round_single_agent_single_strategy() {
    let cfg = ExperimentConfig {
        rounds: 1,
        agents: vec![AgentSpec {
            agent: AgentConfig {
                n_strategies: 1,
                ..AgentConfig::default()
            },
            distribution: AgentDistribution::default(),
        }],
        data: DataConfig {
            heldout_size: 100,
            ..DataConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let out = run_simulation(&cfg).unwrap();
    assert_eq!(out.rows.len(), 1);
    let rec = &out.agent_records[0][0];
    assert_eq!(rec.chosen_strategy, Some(0));
    // step is T^{-1/2} = 1 at T = 1
    assert_eq!(rec.step, 1.0);
    // everything was shared, so there is nothing left to fine-tune on
    assert!(rec.skipped.is_some());
    assert_eq!(out.final_policies[0].0, vec![0.0]);
    // a single agent carries all the weight, so its radius is zero
    let arb = &out.arbiter_records[0];
    assert_eq!(arb.weights, vec![1.0]);
    assert_eq!(arb.radii, vec![0.0]);
}

#[test]
fn adversarial_agent_loses_weight() {
    let mut cfg = ExperimentConfig {
        rounds: 150,
        seed: 9,
        ..ExperimentConfig::default()
    };
    cfg.data.heldout_size = 500;
    cfg.agents[2].distribution.adversarial = true;
    let out = run_simulation(&cfg).unwrap();
    let last = out.arbiter_records.last().unwrap();
    for i in [0, 1, 3] {
        assert!(last.weights[2] < last.weights[i]);
        assert!(last.radii[2] > last.radii[i]);
    }
}

#[test]
fn simulation_is_deterministic_per_seed() {
    let cfg = ExperimentConfig {
        rounds: 30,
        seed: 5,
        data: DataConfig {
            heldout_size: 200,
            ..DataConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let a = run_simulation(&cfg).unwrap();
    let b = run_simulation(&cfg).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.final_theta, b.final_theta);
    let c = run_simulation(&ExperimentConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a.final_theta, c.final_theta);
}

fn toy_batch(n: usize, y: u8) -> Batch {
    (0..n)
        .map(|k| Sample::new(vec![1.0, k as f64 * 0.1], y).unwrap())
        .collect()
}

#[test]
fn arbiter_excludes_starved_agents_and_keeps_their_weight() {
    let cfg = ArbiterConfig::default();
    let mut arb = Arbiter::new(cfg, LossConfig::default(), 3, 2, 10, 0).unwrap();
    let contributions = vec![
        RoundContribution {
            agent_id: 0,
            batch: toy_batch(20, 1),
        },
        RoundContribution {
            agent_id: 1,
            batch: toy_batch(2, 1),
        },
        RoundContribution {
            agent_id: 2,
            batch: toy_batch(20, 0),
        },
    ];
    let (models, rec) = arb.round(&contributions).unwrap();
    assert_eq!(models.len(), 3);
    assert!(rec.excluded[1].is_some());
    assert!(rec.excluded[0].is_none() && rec.excluded[2].is_none());
    assert_eq!(rec.omega[1], rec.omega_before[1]);
    assert_eq!(rec.train_weights[1], 0.0);
    assert!(rec.mean_evals[1].is_none());
    assert_eq!(rec.shared_sizes, vec![20, 2, 20]);
    assert_eq!(rec.val_sizes[0], 6);
}

#[test]
fn agent_round_updates_only_with_retained_data() {
    let cfg = AgentConfig::default();
    let mut agent = Agent::new(0, cfg, LossConfig::default(), 2, 100, 3).unwrap();
    let mixed: Batch = (0..30)
        .map(|k| Sample::new(vec![1.0, (k % 7) as f64 * 0.3 - 1.0], (k % 2) as u8).unwrap())
        .collect();
    let (shared, rec) = agent.round(mixed, &ModelParams::zeros(2)).unwrap();
    assert_eq!(shared.len(), 10);
    assert!(rec.skipped.is_none());
    let est = rec.estimator.unwrap();
    // the estimator is a multiple of e_s - π, whose entries sum to zero
    assert!(est.iter().sum::<f64>().abs() < 1e-12);
    assert!(rec.eval_value.unwrap() > 0.0);
    // the policy descends the estimated cost gradient
    for (nu, g) in agent.policy().iter().zip(&est) {
        assert!((nu - (0.0 - rec.step * g)).abs() < 1e-12);
    }
    assert_eq!(agent.rounds(), 1);
}
