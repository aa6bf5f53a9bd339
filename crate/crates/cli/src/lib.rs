//! The `fuzztarget` command line.

pub mod args;
mod commands;
pub mod config;
pub mod error;

use args::{Cli, Command};
use config::FileConfig;
pub use error::CliError;

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Extract(a) => commands::extract(a, &cfg),
        Command::Assemble(a) => commands::assemble(a),
        Command::Train(a) => commands::train(a, &cfg),
        Command::Evaluate(a) => commands::evaluate_cmd(a, &cfg),
        Command::Predict(a) => commands::predict(a, &cfg),
        Command::Tune(a) => commands::tune(a, &cfg),
        Command::Serve(a) => commands::serve(a, &cfg),
        Command::ToyCorpus(a) => commands::toy(a),
    }
}
