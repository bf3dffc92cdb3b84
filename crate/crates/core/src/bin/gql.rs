//! Command-line front end: `train`, `eval`, `reward`, `gen-data`.

use clap::{Parser, Subcommand};
use gql_core::dataset::{make_dataset, read_manifest, Manifest};
use gql_core::eval::cmd_eval;
use gql_core::grading::cmd_reward;
use gql_core::reward::RewardConfig;
use gql_core::train::{run_training, RunConfig};
use gql_core::{Error, Result};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "gql",
    version,
    about = "Multi-task GRPO on a synthetic quality-assessment environment"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a policy from a JSON run config. `GQL_SEED` overrides the seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; 1 gives the bit-reproducible mode.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Greedy-decode a checkpoint on a dataset and report metrics.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a CSV header and row.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Grade a responses file against a labels file.
    Reward {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        alpha1: Option<f64>,
        #[arg(long)]
        alpha2: Option<f64>,
        /// Write the graded lines here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset from a manifest-style config.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train { config, threads } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.apply_seed_override(std::env::var("GQL_SEED").ok().as_deref())?;
            cfg.validate()?;
            let s = run_training(cfg, threads)?;
            println!(
                "trained {} steps; final checkpoint {}",
                s.steps,
                s.final_checkpoint.display()
            );
        }
        Cmd::Eval { ckpt, data, out, csv } => {
            let report = cmd_eval(&ckpt, &data, &RewardConfig::default(), out.as_deref(), csv.as_deref())?;
            if out.is_none() {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            }
        }
        Cmd::Reward {
            responses,
            labels,
            epsilon,
            alpha1,
            alpha2,
            out,
        } => {
            let d = RewardConfig::default();
            let cfg = RewardConfig {
                score_threshold: epsilon.unwrap_or(d.score_threshold),
                alpha1: alpha1.unwrap_or(d.alpha1),
                alpha2: alpha2.unwrap_or(d.alpha2),
            };
            let summary = match &out {
                Some(p) => {
                    let mut f = std::io::BufWriter::new(std::fs::File::create(p).map_err(|e| Error::io(p, e))?);
                    let s = cmd_reward(&responses, &labels, &cfg, &mut f)?;
                    f.flush().map_err(|e| Error::io(p, e))?;
                    s
                }
                None => cmd_reward(&responses, &labels, &cfg, &mut std::io::stdout().lock())?,
            };
            if out.is_some() {
                println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            }
        }
        Cmd::GenData { config, out } => {
            let request: Manifest = read_manifest(&config)?;
            let m = make_dataset(&request, &out)?;
            println!("{}", m.data_sha256.unwrap_or_default());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
