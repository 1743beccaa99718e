//! `cml verify`: the diagnostics suite on a configuration or a run directory.

use std::path::Path;

use anyhow::{bail, Context};
use cml_core::diagnostics::{verify_config, verify_records, VerificationReport, VerifyOptions};

use crate::config;
use crate::output::{self, CHECKPOINT_FILE, MANIFEST_FILE, RECORDS_FILE};

/// A directory is read as a finished run; anything else as a configuration,
/// which is simulated first.
pub fn verify_target(
    target: &Path,
    seed: Option<u64>,
    opts: &VerifyOptions,
) -> anyhow::Result<VerificationReport> {
    if target.is_dir() {
        return verify_run_dir(target, opts);
    }
    let mut file = config::parse_config(target)?;
    if let Some(s) = seed {
        file.seed = s;
    }
    let cfg = file.to_experiment()?;
    let (_, report) = verify_config(&cfg, opts).context("verification failed")?;
    Ok(report)
}

pub fn verify_run_dir(dir: &Path, opts: &VerifyOptions) -> anyhow::Result<VerificationReport> {
    let records_path = dir.join(RECORDS_FILE);
    if !records_path.exists() {
        bail!(
            "no records: {} does not contain {RECORDS_FILE}",
            dir.display()
        );
    }
    let records = output::read_records(&records_path)?;
    if records.is_empty() {
        bail!("no records: {} is empty", records_path.display());
    }
    let (_, cfg) = config::load_experiment(&dir.join(MANIFEST_FILE))?;
    let checkpoint = output::read_checkpoint(&dir.join(CHECKPOINT_FILE))?;
    let (agents, arbiter): (Vec<_>, Vec<_>) =
        records.into_iter().map(|r| (r.agents, r.arbiter)).unzip();
    verify_records(&cfg, &agents, &arbiter, &checkpoint.theta, opts).context("verification failed")
}
