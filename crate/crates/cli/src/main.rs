mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use log::error;

use args::{Cli, Command, ConfigFile};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let file = match &cli.config {
        Some(p) => match ConfigFile::load(p) {
            Ok(f) => f,
            Err(e) => {
                error!("config: {e}");
                return ExitCode::from(1);
            }
        },
        None => ConfigFile::default(),
    };
    let name = cli.command.name();
    let outcome = match cli.command {
        Command::Synth(a) => commands::synth(a.or(file.synth)),
        Command::Extract(a) => commands::extract(a.or(file.extract)),
        Command::Run(a) => commands::run(a.or(file.run)),
        Command::Verify(a) => commands::verify(a.or(file.verify)),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            error!("{name}: {f}");
            ExitCode::from(f.code())
        }
    }
}
