//! `cml run`: simulate a configuration and write its run directory.

use std::path::Path;

use anyhow::Context;
use cml_core::sim::{run_simulation, SimOutput};

use crate::config::{FileConfig, Manifest};
use crate::output;

/// Runs `file` and writes metrics, records, checkpoint and manifest to
/// `out_dir`.
pub fn run_experiment(file: &FileConfig, out_dir: &Path, force: bool) -> anyhow::Result<SimOutput> {
    let cfg = file.to_experiment()?;
    let manifest = Manifest::new(file)?;
    output::prepare_dir(out_dir, force)?;
    log::info!(
        "running {} rounds with {} agents, seed {}",
        cfg.rounds,
        cfg.n_agents(),
        cfg.seed
    );
    let out = run_simulation(&cfg).context("simulation failed")?;
    for e in &out.events {
        match e.agent {
            Some(i) => log::warn!("round {} agent {i}: {}", e.t, e.message),
            None => log::warn!("round {}: {}", e.t, e.message),
        }
    }
    output::write_run(out_dir, &manifest, &out)?;
    log::info!(
        "held-out loss {:.6} -> {:.6}, error {:.4} -> {:.4}",
        out.heldout_initial_loss,
        out.heldout_final_loss,
        out.heldout_initial_error,
        out.heldout_final_error
    );
    Ok(out)
}
