use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cml::config::{self, SCHEMA};
use cml::output::default_out_root;
use cml::sweep::{self, Axis};
use cml::{run, verify};
use cml_core::diagnostics::VerifyOptions;

#[derive(Parser)]
#[command(
    name = "cml",
    version,
    about = "Incentivized collaborative learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a configuration and write metrics, records, checkpoint and manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to $CML_OUT_ROOT/<config name>-seed<N>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the seed in the file.
        #[arg(long)]
        seed: Option<u64>,
        /// Overwrite a nonempty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Run the diagnostics suite on a configuration file or a run directory.
    Verify {
        target: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also check the arbiter bound against a large sample of the true data law (slow).
        #[arg(long)]
        strict_theorem2: bool,
    },
    /// One run per value of a configuration key, plus a summary CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `key.path=v1,v2,...`, values written as TOML.
        #[arg(long)]
        axis: Axis,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Print the configuration reference with every default.
    DescribeConfig,
}

fn default_out(config: &Path, seed: u64, suffix: &str) -> PathBuf {
    let stem = config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    default_out_root().join(format!("{stem}-seed{seed}{suffix}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<ExitCode> {
    match cmd {
        Command::Run {
            config: path,
            out,
            seed,
            force,
        } => {
            let mut file = config::parse_config(&path)?;
            if let Some(s) = seed {
                file.seed = s;
            }
            let out = out.unwrap_or_else(|| default_out(&path, file.seed, ""));
            run::run_experiment(&file, &out, force)?;
            println!("{}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            target,
            seed,
            strict_theorem2,
        } => {
            let opts = VerifyOptions {
                strict_theorem2,
                ..VerifyOptions::default()
            };
            let report = verify::verify_target(&target, seed, &opts)?;
            print!("{report}");
            if report.passed() {
                println!("verification passed");
                Ok(ExitCode::SUCCESS)
            } else {
                println!("verification FAILED ({} checks)", report.failures().count());
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Sweep {
            config: path,
            axis,
            out,
            seed,
            force,
        } => {
            let out = out.unwrap_or_else(|| default_out(&path, seed.unwrap_or(0), "-sweep"));
            let rows = sweep::sweep(&path, &axis, seed, &out, force)?;
            let failed = rows.iter().filter(|r| r.result.is_err()).count();
            println!("{}", out.join(sweep::SUMMARY_FILE).display());
            if failed > 0 {
                eprintln!("{failed} of {} sub-runs failed", rows.len());
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::DescribeConfig => {
            print!("{SCHEMA}");
            Ok(ExitCode::SUCCESS)
        }
    }
}
