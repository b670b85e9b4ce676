use std::process::ExitCode;

use clap::Parser;
use pisa::cli::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match pisa::run(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("pisa: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
