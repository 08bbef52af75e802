mod args;
mod commands;
mod config;
mod errors;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::config::*;
use crate::errors::{config_error, exit_code};

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(config_error("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()?;
    }
    let file = cli.config.as_deref();
    match &cli.command {
        Command::Generate(args) => {
            let (cfg, out_dir) = GenerateConfig::resolve(load_file(file, "generate")?, args)?;
            commands::generate(&cfg, &out_dir)
        }
        Command::Train(args) => commands::train_command(&TrainCommandConfig::resolve(
            load_file(file, "train")?,
            args,
        )?),
        Command::Audit(args) => {
            commands::audit(&AuditConfig::resolve(load_file(file, "audit")?, args)?)
        }
        Command::Sensitivity(args) => commands::sensitivity(&SensitivityConfig::resolve(
            load_file(file, "sensitivity")?,
            args,
        )?),
        Command::Rank(args) => {
            commands::rank(&RankCommandConfig::resolve(load_file(file, "rank")?, args)?)
        }
        Command::Relabel(args) => commands::relabel(&RelabelCommandConfig::resolve(
            load_file(file, "relabel")?,
            args,
        )?),
        Command::OracleCheck(args) => commands::oracle_check(&OracleCheckConfig::resolve(
            load_file(file, "oracle-check")?,
            args,
        )?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
