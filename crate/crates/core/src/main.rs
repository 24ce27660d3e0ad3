use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use geotomo::cli::{run, Cli};
use geotomo::Error;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = cli.command.args().quiet;
    let start = Instant::now();
    match run(&cli.command) {
        Ok(outcome) => {
            if !quiet {
                print!("{}", outcome.summary);
                eprintln!(
                    "wrote {} files to {} in {:.1} s",
                    outcome.files.len(),
                    outcome.dir.display(),
                    start.elapsed().as_secs_f64()
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
