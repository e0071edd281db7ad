use std::process::ExitCode;

use clap::Parser;
use darkir_cli::{exit_code, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("darkir {}: error: {e}", cli.command.name());
            ExitCode::from(exit_code(&e))
        }
    }
}
