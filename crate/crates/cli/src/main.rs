//! `avqvc` command-line tool.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

mod commands;
mod manifest;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser};

use avqvc::config::RunConfig;

/// Environment variable naming the default feature cache directory.
pub const CACHE_ENV: &str = "AVQVC_CACHE_DIR";

#[derive(Debug, Parser)]
#[command(name = "avqvc", version, about = "One-shot voice conversion with a vector-quantized auto-encoder")]
struct Cli {
    #[command(subcommand)]
    command: commands::Command,
}

fn config_help() -> String {
    let keys = RunConfig::recognized_keys();
    format!(
        "Config file keys (TOML, flags override the file):\n  {}\n\nThe feature cache defaults to ${CACHE_ENV} when --cache/--data is omitted.",
        keys.join("\n  ")
    )
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let help = config_help();
    let mut cmd = Cli::command().after_long_help(help.clone());
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in names {
        cmd = cmd.mut_subcommand(name, |sub| sub.after_help(help.clone()));
    }
    let matches = match cmd.try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
