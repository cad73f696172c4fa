//! `oelm`: plan architectures, train, generate, benchmark, inspect data,
//! and average checkpoints. Exit codes: 0 success, 1 usage, 2 data/format
//! problems, 3 numeric failures.

mod commands;
mod config;

use clap::error::ErrorKind;
use clap::Parser;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "oelm", version, about = "Layer-wise scaled transformer toolkit")]
struct Cli {
    #[command(subcommand)]
    command: commands::Command,
}

fn main() -> ExitCode {
    // Die quietly when a pipe reader stops early, like other unix tools.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let requested = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if requested { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code =
                err.downcast_ref::<oelm_core::Error>().map(|e| e.exit_code()).unwrap_or(2);
            ExitCode::from(code as u8)
        }
    }
}
