use std::io;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use rrn::cli::{execute, Cli};
use rrn::CliError;

fn run() -> anyhow::Result<()> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            e.print().context("printing help")?;
            return Ok(());
        }
        Err(e) => {
            let text = e.render().to_string();
            let text = text.strip_prefix("error: ").unwrap_or(&text).trim_end();
            return Err(CliError::Usage(text.to_owned()).into());
        }
    };
    execute(cli, &mut io::stdout().lock(), &mut io::stderr())?;
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            e.downcast_ref::<CliError>().map_or(ExitCode::from(2), CliError::exit_code)
        }
    }
}
