mod args;
mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use crate::args::{Cli, Command, Whatif};
use crate::commands::Globals;
use crate::error::CliError;

fn override_self(cmd: clap::Command) -> clap::Command {
    cmd.args_override_self(true).mut_subcommands(override_self)
}

fn threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("NETGNN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("NETGNN_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run() -> Result<(), CliError> {
    let argv = config::expand(std::env::args_os().collect())?;
    let matches = override_self(Cli::command()).get_matches_from(argv);
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::Config(e.to_string()))?;
    threads()?;
    let g = Globals {
        seed: cli.seed.unwrap_or(0),
        out: cli.out,
    };
    match &cli.command {
        Command::Simulate(a) => commands::simulate_cmd(&g, a),
        Command::Train(a) => commands::train_cmd(&g, a),
        Command::Eval(a) => commands::eval_cmd(&g, a),
        Command::Optimize(a) => commands::optimize_cmd(&g, a),
        Command::Whatif { what } => match what {
            Whatif::AddUsers(a) => commands::add_users_cmd(&g, a),
            Whatif::AddLink(a) => commands::add_link_cmd(&g, a),
            Whatif::LinkFailures(a) => commands::link_failures_cmd(&g, a),
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("netgnn: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
