use std::process::ExitCode;

use clap::Parser;
use kite_cli::args::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match kite_cli::args::run(cli, |k| std::env::var(k).ok()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("kite: {e}");
            ExitCode::from(e.exit_code)
        }
    }
}
