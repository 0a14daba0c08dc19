mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;
use crate::commands::CliError;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                let _ = e.print();
                return ExitCode::from(2);
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid usage");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };

    if let Some(threads) = cli.threads {
        if threads == 0 {
            return report(CliError::Usage("--threads must be >= 1".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            return report(CliError::Usage(format!("cannot configure thread pool: {e}")));
        }
    }

    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> ExitCode {
    let message = e.to_string().replace('\n', " ");
    eprintln!("error[{}]: {}", e.kind(), message);
    ExitCode::from(if matches!(e, CliError::Usage(_)) { 2 } else { 1 })
}
