use std::process::ExitCode;

use clap::Parser;
use isib::cli::Cli;
use isib::commands;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("ISIB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::from(isib::error::EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
