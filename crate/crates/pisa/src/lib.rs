//! Command line front end for `pisa-core`: config files, run directories,
//! JSON/CSV/SVG outputs and parallel sweeps.

pub mod cli;
pub mod commands;
pub mod error;
pub mod formats;
pub mod plot;
pub mod store;
pub mod sweep;

use std::path::PathBuf;

use cli::{Cli, Command};
pub use error::{CliError, CliResult};

/// Execute a parsed command line and return the run directory it produced.
pub fn run(cli: &Cli) -> CliResult<PathBuf> {
    match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Rank(a) => commands::rank(a),
        Command::Eval(a) => commands::eval(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Report(a) => commands::report(a),
        Command::Sweep(a) => {
            let out = sweep::sweep(a)?;
            eprintln!("sweep: {} trained, {} reused", out.trained, out.reused);
            for r in out.rows.iter().filter(|r| r.error.is_some()) {
                eprintln!("sweep: row `{}` failed: {}", r.label, r.error.as_deref().unwrap_or(""));
            }
            Ok(out.dir)
        }
    }
}
