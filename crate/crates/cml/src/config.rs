//! The TOML configuration dialect and run manifests.
//!
//! Every field has a default, so a file holding only `seed` and `rounds` is a
//! complete configuration. `[agent]` sets the defaults for every agent and
//! `[[agents]]` entries override them by `id`. A manifest written by `cml run`
//! embeds the resolved configuration under `[config]` and is itself accepted
//! wherever a configuration is.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use cml_core::agent::{AgentConfig, EvalFn, ValuationRule};
use cml_core::arbiter::ArbiterConfig;
use cml_core::distortion::{DistortionFn, DistortionKind};
use cml_core::model::LossConfig;
use cml_core::schedule::StepSchedule;
use cml_core::sim::{AgentDistribution, AgentSpec, BatchSizeLaw, DataConfig, ExperimentConfig};
use cml_core::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Reference for every key, with its default. Printed by `cml describe-config`.
pub const SCHEMA: &str = r#"# cml configuration (TOML). Every key is optional; values shown are defaults.

seed = 0                 # root seed of every random stream
rounds = 500             # T, number of rounds (>= 1)
dim = 10                 # feature dimension d
n_agents = 4

[data]
x_max = 5.0              # features are truncated to the ball of this radius
feature_std = 1.0        # per-coordinate std of the Gaussian before truncation
theta_star_norm = 4.0    # norm of the ground-truth model
heldout_size = 10000     # held-out global sample for the population loss

[loss]
gamma = 0.5              # class weight, in (0, 1)

# Defaults for every agent.
[agent]
strategies = 3           # number of ranked partitions to choose from
train_fraction = 0.7     # p, in (0.5, 1)
fine_batches = 2         # fine-tuning steps on the retained training split
fine_step = 0.05         # fine-tuning step, in [0, 1)
policy_step = { kind = "horizon_power", exponent = 0.5 }   # b_t = T^-0.5; or { kind = "constant", value = 0.1 }
valuation = "loss_descending"   # loss_descending | label_balance | random_fixed
eval = "error_rate"             # error_rate | sigmoid_margin
batch_size = { kind = "fixed", size = 40 }   # or { kind = "poisson", mean = 40.0 }
mean_shift = []          # feature mean, empty or `dim` entries
label_flip_rate = 0.0    # in [0, 0.5)
adversarial = false      # invert every label

# Per-agent overrides: any [agent] key plus the agent's `id`.
# [[agents]]
# id = 3
# adversarial = true

[arbiter]
train_fraction = 0.7     # p, in (0.5, 1)
inner_batches = 3        # n_b, inner model steps per round
lambda_omega = 0.1       # weight regularization, in (0, 0.5]
alpha = { kind = "horizon_power", exponent = 0.6 }   # inner step T^-0.6
beta = { kind = "horizon_power", exponent = 0.4 }    # weight step T^-0.4
noise_scale = 1.0        # noise radius is noise_scale * (1 - g(h))

[arbiter.distortion]
kind = "identity"        # identity | quadratic | exponential | square_root | logarithmic
# lambda = 1.0           # shape; defaults to 1 for every kind but identity
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub seed: u64,
    pub rounds: usize,
    pub dim: usize,
    pub n_agents: usize,
    pub data: DataSection,
    pub loss: LossSection,
    pub agent: AgentSection,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<AgentOverride>,
    pub arbiter: ArbiterSection,
}

impl Default for FileConfig {
    fn default() -> Self {
        let core = ExperimentConfig::default();
        FileConfig {
            seed: core.seed,
            rounds: core.rounds,
            dim: core.dim,
            n_agents: core.n_agents(),
            data: DataSection::default(),
            loss: LossSection::default(),
            agent: AgentSection::default(),
            agents: Vec::new(),
            arbiter: ArbiterSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub x_max: f64,
    pub feature_std: f64,
    pub theta_star_norm: f64,
    pub heldout_size: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DataConfig::default();
        DataSection {
            x_max: d.x_max,
            feature_std: d.feature_std,
            theta_star_norm: d.theta_star_norm,
            heldout_size: d.heldout_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub gamma: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            gamma: LossConfig::default().gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSection {
    pub strategies: usize,
    pub train_fraction: f64,
    pub fine_batches: usize,
    pub fine_step: f64,
    pub policy_step: StepSchedule,
    pub valuation: ValuationRule,
    pub eval: EvalFn,
    pub batch_size: BatchSizeLaw,
    pub mean_shift: Vec<f64>,
    pub label_flip_rate: f64,
    pub adversarial: bool,
}

impl Default for AgentSection {
    fn default() -> Self {
        let a = AgentConfig::default();
        let d = AgentDistribution::default();
        AgentSection {
            strategies: a.n_strategies,
            train_fraction: a.train_fraction,
            fine_batches: a.fine_batches,
            fine_step: a.fine_step,
            policy_step: a.policy_step,
            valuation: a.valuation,
            eval: a.eval,
            batch_size: d.batch_size,
            mean_shift: d.mean_shift,
            label_flip_rate: d.label_flip_rate,
            adversarial: d.adversarial,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentOverride {
    pub id: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategies: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fine_batches: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fine_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy_step: Option<StepSchedule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valuation: Option<ValuationRule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalFn>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<BatchSizeLaw>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_shift: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_flip_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adversarial: Option<bool>,
}

impl AgentOverride {
    fn apply(&self, base: &AgentSection) -> AgentSection {
        let mut a = base.clone();
        macro_rules! take {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    a.$f = v.clone();
                }
            )*};
        }
        take!(
            strategies,
            train_fraction,
            fine_batches,
            fine_step,
            policy_step,
            valuation,
            eval,
            batch_size,
            mean_shift,
            label_flip_rate,
            adversarial
        );
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArbiterSection {
    pub train_fraction: f64,
    pub inner_batches: usize,
    pub lambda_omega: f64,
    pub alpha: StepSchedule,
    pub beta: StepSchedule,
    pub noise_scale: f64,
    pub distortion: DistortionSection,
}

impl Default for ArbiterSection {
    fn default() -> Self {
        let a = ArbiterConfig::default();
        ArbiterSection {
            train_fraction: a.train_fraction,
            inner_batches: a.inner_batches,
            lambda_omega: a.lambda_omega,
            alpha: a.alpha,
            beta: a.beta,
            noise_scale: a.noise_scale,
            distortion: DistortionSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistortionSection {
    pub kind: DistortionKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl Default for DistortionSection {
    fn default() -> Self {
        DistortionSection {
            kind: DistortionKind::Identity,
            lambda: None,
        }
    }
}

impl DistortionSection {
    pub fn resolve(&self) -> DistortionFn {
        let lambda = self.lambda.unwrap_or(match self.kind {
            DistortionKind::Identity => 0.0,
            _ => 1.0,
        });
        DistortionFn {
            kind: self.kind,
            lambda,
        }
    }
}

impl FileConfig {
    /// Resolves overrides and validates every range; errors name the key.
    pub fn to_experiment(&self) -> anyhow::Result<ExperimentConfig> {
        let mut seen = BTreeSet::new();
        for (k, o) in self.agents.iter().enumerate() {
            if o.id >= self.n_agents {
                bail!(
                    "agents[{k}].id: {} is out of range for n_agents = {}",
                    o.id,
                    self.n_agents
                );
            }
            if !seen.insert(o.id) {
                bail!("agents[{k}].id: agent {} is overridden twice", o.id);
            }
        }
        let agents = (0..self.n_agents)
            .map(|i| {
                let a = match self.agents.iter().find(|o| o.id == i) {
                    Some(o) => o.apply(&self.agent),
                    None => self.agent.clone(),
                };
                AgentSpec {
                    agent: AgentConfig {
                        n_strategies: a.strategies,
                        train_fraction: a.train_fraction,
                        fine_batches: a.fine_batches,
                        fine_step: a.fine_step,
                        policy_step: a.policy_step,
                        valuation: a.valuation,
                        eval: a.eval,
                    },
                    distribution: AgentDistribution {
                        mean_shift: a.mean_shift,
                        label_flip_rate: a.label_flip_rate,
                        batch_size: a.batch_size,
                        adversarial: a.adversarial,
                    },
                }
            })
            .collect();
        let arb = &self.arbiter;
        let cfg = ExperimentConfig {
            dim: self.dim,
            rounds: self.rounds,
            seed: self.seed,
            data: DataConfig {
                x_max: self.data.x_max,
                feature_std: self.data.feature_std,
                theta_star_norm: self.data.theta_star_norm,
                heldout_size: self.data.heldout_size,
            },
            agents,
            arbiter: ArbiterConfig {
                train_fraction: arb.train_fraction,
                inner_batches: arb.inner_batches,
                lambda_omega: arb.lambda_omega,
                alpha: arb.alpha,
                beta: arb.beta,
                distortion: arb.distortion.resolve(),
                noise_scale: arb.noise_scale,
            },
            loss: LossConfig {
                gamma: self.loss.gamma,
            },
        };
        cfg.validate().map_err(|e| match e {
            Error::InvalidConfig { path, reason } => {
                anyhow::anyhow!("invalid value at `{}`: {reason}", self.file_path(&path))
            }
            other => anyhow::anyhow!(other),
        })?;
        Ok(cfg)
    }

    /// Maps a resolved-agent path such as `agents[2].fine_step` back to the
    /// key that set it: the agent's `[[agents]]` entry if it overrides the
    /// field, `[agent]` otherwise.
    fn file_path(&self, core_path: &str) -> String {
        let Some(rest) = core_path.strip_prefix("agents[") else {
            return core_path.to_string();
        };
        let Some((id, field)) = rest.split_once("].") else {
            return core_path.to_string();
        };
        let Ok(id) = id.parse::<usize>() else {
            return core_path.to_string();
        };
        let key = field.split('.').next().unwrap_or(field);
        let overridden = self.agents.iter().enumerate().find(|(_, o)| {
            o.id == id && toml::Table::try_from(*o).is_ok_and(|t| t.contains_key(key))
        });
        match overridden {
            Some((k, _)) => format!("agents[{k}].{field}"),
            None => format!("agent.{field}"),
        }
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string(self).context("serializing configuration")
    }

    /// SHA-256 of the canonical serialization.
    pub fn sha256(&self) -> anyhow::Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub manifest: ManifestHeader,
    pub config: FileConfig,
}

impl Manifest {
    pub fn new(config: &FileConfig) -> anyhow::Result<Self> {
        Ok(Manifest {
            manifest: ManifestHeader {
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed: config.seed,
                config_sha256: config.sha256()?,
            },
            config: config.clone(),
        })
    }
}

/// Parses configuration text, accepting either a plain configuration or a
/// manifest. A manifest whose hash does not match its configuration is
/// rejected.
pub fn parse_config_str(text: &str) -> anyhow::Result<FileConfig> {
    let table: toml::Table = toml::from_str(text).context("parse failure")?;
    if table.contains_key("manifest") {
        let m: Manifest = toml::from_str(text).context("parse failure in manifest")?;
        let actual = m.config.sha256()?;
        if actual != m.manifest.config_sha256 {
            bail!(
                "manifest.config_sha256: recorded {} but the embedded configuration hashes to {actual}",
                m.manifest.config_sha256
            );
        }
        return Ok(m.config);
    }
    toml::from_str(text).context("parse failure")
}

pub fn parse_config(path: &Path) -> anyhow::Result<FileConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read configuration {}", path.display()))?;
    parse_config_str(&text).with_context(|| format!("in {}", path.display()))
}

/// `parse_config` followed by full validation.
pub fn load_experiment(path: &Path) -> anyhow::Result<(FileConfig, ExperimentConfig)> {
    let file = parse_config(path)?;
    let cfg = file
        .to_experiment()
        .with_context(|| format!("invalid configuration {}", path.display()))?;
    Ok((file, cfg))
}

/// Sets `path` (dotted keys, `name[i]` for array elements) in a TOML table,
/// creating intermediate tables as needed.
pub fn set_key(table: &mut toml::Table, path: &str, value: toml::Value) -> anyhow::Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed key path `{path}`");
    }
    let mut cursor = table;
    for (k, part) in parts.iter().enumerate() {
        let last = k + 1 == parts.len();
        let (name, index) = match part.split_once('[') {
            Some((name, rest)) => {
                let idx = rest
                    .strip_suffix(']')
                    .and_then(|s| s.parse::<usize>().ok())
                    .with_context(|| format!("malformed index in `{part}`"))?;
                (name, Some(idx))
            }
            None => (*part, None),
        };
        let slot = match index {
            None if last => {
                cursor.insert(name.to_string(), value);
                return Ok(());
            }
            None => cursor
                .entry(name.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new())),
            Some(i) => {
                let arr = cursor
                    .get_mut(name)
                    .and_then(toml::Value::as_array_mut)
                    .with_context(|| {
                        format!("`{name}` is not an array in the base configuration")
                    })?;
                let len = arr.len();
                let item = arr
                    .get_mut(i)
                    .with_context(|| format!("`{name}[{i}]` is out of range (length {len})"))?;
                if last {
                    *item = value;
                    return Ok(());
                }
                item
            }
        };
        cursor = slot
            .as_table_mut()
            .with_context(|| format!("`{part}` is not a table"))?;
    }
    unreachable!("loop returns on the last key")
}

/// Reads a value written on the command line as TOML, falling back to a bare
/// string.
pub fn parse_value(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

/// Loads a configuration or manifest as a raw table for editing.
pub fn raw_table(path: &Path) -> anyhow::Result<toml::Table> {
    let file = parse_config(path)?;
    toml::Table::try_from(&file).context("re-encoding configuration")
}

pub fn from_table(table: toml::Table) -> anyhow::Result<FileConfig> {
    FileConfig::deserialize(table).map_err(|e| anyhow::anyhow!("{e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_parses_to_defaults() {
        assert_eq!(parse_config_str(SCHEMA).unwrap(), FileConfig::default());
    }

    #[test]
    fn defaults_match_core() {
        let cfg = FileConfig::default().to_experiment().unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn set_key_paths() {
        let mut t = toml::Table::try_from(FileConfig::default()).unwrap();
        set_key(&mut t, "arbiter.distortion.kind", parse_value("quadratic")).unwrap();
        set_key(&mut t, "rounds", parse_value("7")).unwrap();
        let f = from_table(t).unwrap();
        assert_eq!(f.rounds, 7);
        assert_eq!(f.arbiter.distortion.kind, DistortionKind::Quadratic);
        let mut t = toml::Table::try_from(FileConfig::default()).unwrap();
        assert!(set_key(&mut t, "agents[0].adversarial", parse_value("true")).is_err());
    }

    #[test]
    fn distortion_lambda_defaults_by_kind() {
        let d = DistortionSection {
            kind: DistortionKind::Quadratic,
            lambda: None,
        };
        assert_eq!(d.resolve().lambda, 1.0);
        assert_eq!(
            DistortionSection::default().resolve(),
            DistortionFn::identity()
        );
    }
}
