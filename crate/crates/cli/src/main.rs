use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use decomp_cli::config::parse_list;
use decomp_cli::{cmd_ablation, cmd_run, cmd_sweep, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "decomp", version, about = "Continual relation-learning experiments with a decomposed classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the task sequence for every seed; writes accuracy.csv and summary.json.
    Run(Common),
    /// Compare full / no_ei / no_at / no_both on the same seeds; writes ablation.csv.
    Ablation(Common),
    /// One multi-seed run per alpha_prev value; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated alpha_prev values (default: config sweep_values).
        #[arg(long)]
        values: Option<String>,
    },
}

#[derive(Args)]
struct Common {
    /// Flat TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "K=V")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated run seeds.
    #[arg(long)]
    seeds: Option<String>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = ExperimentConfig::load(self.config.as_deref(), &self.set)?;
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(seeds) = &self.seeds {
            cfg.seeds = parse_list("seed", seeds)?;
            cfg.seeds.sort_unstable();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(common) => {
            let report = cmd_run(&common.resolve()?)?;
            println!("{}", report.table_row());
        }
        Command::Ablation(common) => {
            let report = cmd_ablation(&common.resolve()?)?;
            print!("{}", report.table());
        }
        Command::Sweep { common, values } => {
            let cfg = common.resolve()?;
            let values = match values {
                Some(v) => parse_list("alpha_prev", &v)?,
                None => cfg.sweep_values.clone(),
            };
            let report = cmd_sweep(&cfg, &values)?;
            print!("{}", report.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("decomp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
