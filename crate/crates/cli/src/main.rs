mod args;
mod error;
mod output;
mod run;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use error::{CliError, ExitKind};

fn dispatch(command: Command) -> Result<run::Report, CliError> {
    match command {
        Command::Simulate(c) => run::simulate_cmd(c),
        Command::Fit(c) => run::fit_cmd(c),
        Command::Bf(c) => run::bf_cmd(c),
        Command::Robust(c) => run::robust_cmd(c),
        Command::SelectJ(c) => run::select_j_cmd(c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(ExitKind::Validation as u8),
            };
        }
    };
    let outcome = dispatch(cli.command).and_then(|report| {
        let written = report.outputs.commit()?;
        Ok((report.summary, written))
    });
    match outcome {
        Ok((summary, written)) => {
            println!("{summary}");
            for p in written {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
