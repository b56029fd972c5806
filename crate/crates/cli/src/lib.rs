//! Command-line front end: dataset preparation, training, cross-validation,
//! evaluation, prediction and model inspection.

mod args;
pub mod commands;
pub mod run_dir;
pub mod settings;

pub use args::*;

use anyhow::Result;

pub fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Prepare(a) => commands::prepare(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Cv(a) => commands::cv(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Inspect(a) => commands::inspect(a),
    }
}
