use std::process::ExitCode;

use clap::Parser;
use plasticity::cli::{self, Cli};

fn main() -> ExitCode {
    let args = Cli::parse();
    let status = match start(&args) {
        Ok(outcome) => {
            if !outcome.message.is_empty() {
                println!("{}", outcome.message);
            }
            for p in &outcome.written {
                eprintln!("wrote {}", p.display());
            }
            outcome.status
        }
        Err(e) => {
            eprintln!("error: {e}");
            cli::exit_code(&e)
        }
    };
    ExitCode::from(status as u8)
}

fn start(args: &Cli) -> plasticity::Result<cli::Outcome> {
    if let Some(n) = cli::workers_from_env()? {
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    cli::run(&args.command)
}
