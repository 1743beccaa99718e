//! `cml sweep`: one sub-run per value of a single configuration key, joined
//! into `summary.csv`.

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cml_core::diagnostics::{stationarity_metric, Target};
use cml_core::math;
use cml_core::sim::SimOutput;

use crate::config;
use crate::run::run_experiment;

pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for Axis {
    type Err = anyhow::Error;

    /// `key.path=v1,v2,...`; commas inside brackets, braces or quotes do not
    /// split.
    fn from_str(s: &str) -> anyhow::Result<Self> {
        let (key, list) = s
            .split_once('=')
            .with_context(|| format!("axis `{s}` must look like key.path=v1,v2"))?;
        let key = key.trim();
        if key.is_empty() {
            bail!("axis `{s}` has an empty key");
        }
        let values: Vec<String> = split_top_level(list)
            .into_iter()
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            bail!("axis `{key}` has an empty value list");
        }
        Ok(Axis {
            key: key.to_string(),
            values,
        })
    }
}

fn split_top_level(list: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let (mut depth, mut quoted, mut start) = (0i32, false, 0);
    for (i, c) in list.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '[' | '{' if !quoted => depth += 1,
            ']' | '}' if !quoted => depth -= 1,
            ',' if !quoted && depth == 0 => {
                out.push(&list[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&list[start..]);
    out
}

/// One sub-run; `result` holds the failure message if it failed.
#[derive(Debug)]
pub struct SweepRow {
    pub value: String,
    pub dir: PathBuf,
    pub result: Result<SimOutput, String>,
}

fn dir_name(k: usize, value: &str) -> String {
    let clean: String = value
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .take(40)
        .collect();
    format!("{k:02}-{clean}")
}

/// Runs every value of `axis` against `base`. Failed sub-runs are recorded and
/// the sweep continues; the caller decides the exit status.
pub fn sweep(
    base: &Path,
    axis: &Axis,
    seed: Option<u64>,
    out_dir: &Path,
    force: bool,
) -> anyhow::Result<Vec<SweepRow>> {
    let table = config::raw_table(base)?;
    crate::output::prepare_dir(out_dir, force)?;
    let mut rows = Vec::with_capacity(axis.values.len());
    for (k, value) in axis.values.iter().enumerate() {
        let dir = out_dir.join(dir_name(k, value));
        let result = (|| {
            let mut t = table.clone();
            config::set_key(&mut t, &axis.key, config::parse_value(value))?;
            let mut file = config::from_table(t)?;
            if let Some(s) = seed {
                file.seed = s;
            }
            run_experiment(&file, &dir, force)
        })()
        .map_err(|e| format!("{e:#}"));
        if let Err(e) = &result {
            log::error!("{}={value}: {e}", axis.key);
        }
        rows.push(SweepRow {
            value: value.clone(),
            dir,
            result,
        });
    }
    write_summary(&out_dir.join(crate::sweep::SUMMARY_FILE), &axis.key, &rows)?;
    Ok(rows)
}

const AGENT_SUMMARY: [&str; 5] = [
    "stationarity",
    "mean_weight",
    "final_weight",
    "mean_radius",
    "final_radius",
];

/// Columns: the axis value, status, final held-out loss and error, arbiter
/// stationarity, then per agent its stationarity and the mean and final
/// weight and noise radius over the run.
pub fn summary_columns(key: &str, n_agents: usize) -> Vec<String> {
    let mut cols = vec![
        key.to_string(),
        "status".into(),
        "heldout_loss".into(),
        "heldout_error".into(),
        "arbiter_stationarity".into(),
    ];
    for i in 0..n_agents {
        cols.extend(AGENT_SUMMARY.iter().map(|c| format!("agent{i}_{c}")));
    }
    cols
}

fn summary_values(out: &SimOutput) -> Vec<String> {
    let f = |v: f64| v.to_string();
    let opt = |v: Option<f64>| v.map(f).unwrap_or_default();
    let metric = |which| {
        stationarity_metric(&out.agent_records, &out.arbiter_records, which)
            .ok()
            .map(|r| r.mean_sq)
    };
    let mut v = vec![
        f(out.heldout_final_loss),
        f(out.heldout_final_error),
        opt(metric(Target::Arbiter)),
    ];
    for i in 0..out.final_policies.len() {
        let weights: Vec<f64> = out.arbiter_records.iter().map(|r| r.weights[i]).collect();
        let radii: Vec<f64> = out.arbiter_records.iter().map(|r| r.radii[i]).collect();
        v.extend([
            opt(metric(Target::Agent(i))),
            opt(math::mean(&weights)),
            opt(weights.last().copied()),
            opt(math::mean(&radii)),
            opt(radii.last().copied()),
        ]);
    }
    v
}

fn write_summary(path: &Path, key: &str, rows: &[SweepRow]) -> anyhow::Result<()> {
    let n = rows
        .iter()
        .filter_map(|r| r.result.as_ref().ok())
        .map(|o| o.final_policies.len())
        .max()
        .unwrap_or(0);
    let cols = summary_columns(key, n);
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(&cols)?;
    for row in rows {
        let mut rec = vec![row.value.clone()];
        match &row.result {
            Ok(out) => {
                rec.push("ok".into());
                rec.extend(summary_values(out));
            }
            Err(e) => rec.push(format!("failed: {e}")),
        }
        rec.resize(cols.len(), String::new());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing() {
        let a: Axis = "rounds=100,400".parse().unwrap();
        assert_eq!(a.values, ["100", "400"]);
        let a: Axis = "agent.mean_shift=[1.0, 0.0],[0.0, 1.0]".parse().unwrap();
        assert_eq!(a.values, ["[1.0, 0.0]", "[0.0, 1.0]"]);
        assert!("rounds=".parse::<Axis>().is_err());
        assert!("rounds".parse::<Axis>().is_err());
    }
}
