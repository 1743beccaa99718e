//! Run directory layout and file formats.
//!
//! * `metrics.csv`: one header row then one row per round, columns from
//!   [`MetricsRow::columns`]; missing values are empty fields.
//! * `records.jsonl`: one JSON object per round with every agent record and
//!   the arbiter record.
//! * `checkpoint.txt`: final parameters, one labelled line each
//!   (`theta`, `omega`, `nu<i>`) of space-separated decimals.
//! * `manifest.toml`: version, seed, configuration hash and the configuration.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cml_core::agent::AgentRoundRecord;
use cml_core::arbiter::ArbiterRoundRecord;
use cml_core::model::ModelParams;
use cml_core::sim::{MetricsRow, SimOutput};
use serde::{Deserialize, Serialize};

use crate::config::Manifest;

pub const METRICS_FILE: &str = "metrics.csv";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const MANIFEST_FILE: &str = "manifest.toml";

/// One line of `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub agents: Vec<AgentRoundRecord>,
    pub arbiter: ArbiterRoundRecord,
}

fn field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics<W: Write>(out: W, n_agents: usize, rows: &[MetricsRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MetricsRow::columns(n_agents))?;
    for row in rows {
        w.write_record(row.values().into_iter().map(field))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records<W: Write>(mut out: W, output: &SimOutput) -> anyhow::Result<()> {
    for (t, (agents, arbiter)) in output
        .agent_records
        .iter()
        .zip(&output.arbiter_records)
        .enumerate()
    {
        let line = RoundRecord {
            t,
            agents: agents.clone(),
            arbiter: arbiter.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> anyhow::Result<Vec<RoundRecord>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{}:{}: malformed record", path.display(), k + 1))?,
        );
    }
    Ok(out)
}

fn floats(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

pub fn write_checkpoint<W: Write>(mut out: W, output: &SimOutput) -> anyhow::Result<()> {
    writeln!(out, "theta {}", floats(&output.final_theta))?;
    writeln!(out, "omega {}", floats(&output.final_omega))?;
    for (i, nu) in output.final_policies.iter().enumerate() {
        writeln!(out, "nu{i} {}", floats(nu))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub theta: ModelParams,
    pub omega: Vec<f64>,
    pub policies: Vec<Vec<f64>>,
}

pub fn read_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut ck = Checkpoint {
        theta: ModelParams(Vec::new()),
        omega: Vec::new(),
        policies: Vec::new(),
    };
    for (k, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(label) = parts.next() else { continue };
        let values = parts
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{}:{}: bad number", path.display(), k + 1))?;
        match label {
            "theta" => ck.theta = ModelParams(values),
            "omega" => ck.omega = values,
            l if l.starts_with("nu") => ck.policies.push(values),
            other => bail!("{}:{}: unknown label `{other}`", path.display(), k + 1),
        }
    }
    Ok(ck)
}

/// Creates `dir`, refusing to touch a nonempty one unless `force` is set.
pub fn prepare_dir(dir: &Path, force: bool) -> anyhow::Result<()> {
    if dir.exists() {
        let nonempty = fs::read_dir(dir)
            .with_context(|| format!("cannot read {}", dir.display()))?
            .next()
            .is_some();
        if nonempty && !force {
            bail!(
                "output directory {} already exists and is not empty; pass --force to overwrite",
                dir.display()
            );
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| {
        format!("cannot write {}", path.display())
    })?))
}

/// Writes all four run files into `dir`.
pub fn write_run(dir: &Path, manifest: &Manifest, output: &SimOutput) -> anyhow::Result<()> {
    let n = output.final_policies.len();
    write_metrics(create(dir, METRICS_FILE)?, n, &output.rows)?;
    write_records(create(dir, RECORDS_FILE)?, output)?;
    write_checkpoint(create(dir, CHECKPOINT_FILE)?, output)?;
    let text = toml::to_string(manifest).context("serializing manifest")?;
    fs::write(dir.join(MANIFEST_FILE), text)
        .with_context(|| format!("cannot write {}", dir.join(MANIFEST_FILE).display()))?;
    Ok(())
}

/// Default output root: `$CML_OUT_ROOT`, else `runs` under the working
/// directory.
pub fn default_out_root() -> PathBuf {
    std::env::var_os("CML_OUT_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}
