use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mampc_cli::pipeline::{self, RunVariant};
use mampc_cli::{CliError, ExperimentConfig, PlantKind};
use mampc_core::exec::Execution;

#[derive(Parser)]
#[command(name = "mampc", version, about = "Minimum-attention MPC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Controller {
    Mpc,
    Mampc,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (TOML); built-in tank defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Artifact directory; defaults to `run.out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the PRBS identification experiment and write dataset.csv.
    Simulate(Common),
    /// Identify a state-space model from dataset.csv and write model.csv.
    Identify(Common),
    /// Closed-loop run against model.csv; writes log, plots and metrics.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "mampc")]
        controller: Controller,
        /// Sparsity horizon for MAMPC, overriding the config.
        #[arg(long)]
        n_s: Option<usize>,
        #[arg(long)]
        drop: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Metrics table for existing logs.
    Compare {
        logs: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also upsert the rows into <out>/metrics.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        drop: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Simulate, identify, then run MPC and MAMPC (n_s = 1, 3) in parallel.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Run the variants one after another.
        #[arg(long)]
        sequential: bool,
    },
    /// Print the resolved configuration.
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults for this plant when no config file is given.
        #[arg(long, default_value = "tank")]
        plant: String,
    },
}

fn load(config: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    match config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::defaults(PlantKind::Tank)),
    }
}

fn out_dir(cfg: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from(&cfg.out_dir))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(c) => {
            let cfg = load(c.config.as_deref())?;
            let path = pipeline::cmd_simulate(&cfg, &out_dir(&cfg, c.out))?;
            println!("wrote {}", path.display());
        }
        Command::Identify(c) => {
            let cfg = load(c.config.as_deref())?;
            let out = out_dir(&cfg, c.out);
            let id = pipeline::cmd_identify(&cfg, &out)?;
            let sv: Vec<String> = id.singular_values.iter().take(8).map(|s| format!("{s:.3e}")).collect();
            println!("order {} (block rows {}), singular values {}", id.order, id.block_rows, sv.join(" "));
            println!("wrote {}", out.join(pipeline::MODEL_FILE).display());
        }
        Command::Run { common, controller, n_s, drop, threshold } => {
            let mut cfg = load(common.config.as_deref())?;
            cfg.drop = drop.unwrap_or(cfg.drop);
            cfg.threshold = threshold.unwrap_or(cfg.threshold);
            let variant = match controller {
                Controller::Mpc => RunVariant::mpc(),
                Controller::Mampc => RunVariant::mampc(n_s.unwrap_or(cfg.horizon.n_s)),
            };
            let out = out_dir(&cfg, common.out);
            let outcome = pipeline::cmd_run(&cfg, &out, variant)?;
            print!("{}", pipeline::format_table(std::slice::from_ref(&outcome.metrics)));
            println!("wrote {}", outcome.dir.display());
        }
        Command::Compare { logs, config, out, drop, threshold } => {
            if logs.is_empty() {
                return Err(CliError::Config("compare needs at least one log file".into()));
            }
            let cfg = load(config.as_deref())?;
            let rows = pipeline::cmd_compare(
                &logs,
                threshold.unwrap_or(cfg.threshold),
                drop.unwrap_or(cfg.drop),
                out.as_deref(),
            )?;
            print!("{}", pipeline::format_table(&rows));
        }
        Command::Sweep { common, sequential } => {
            let cfg = load(common.config.as_deref())?;
            let exec = if sequential { Execution::Sequential } else { Execution::Parallel };
            let outcomes = pipeline::cmd_sweep(&cfg, &out_dir(&cfg, common.out), exec)?;
            let rows: Vec<_> = outcomes.into_iter().map(|o| o.metrics).collect();
            print!("{}", pipeline::format_table(&rows));
        }
        Command::Config { config, plant } => {
            let cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => match plant.as_str() {
                    "tank" => ExperimentConfig::defaults(PlantKind::Tank),
                    "sofc" => ExperimentConfig::defaults(PlantKind::Sofc),
                    other => return Err(CliError::Config(format!("unknown plant {other:?}"))),
                },
            };
            print!("{}", cfg.to_flat());
        }
    }
    Ok(())
}
