//! Command-line harness: synthetic scenes, unmixing runs, evaluation,
//! parameter sweeps and manifest replay.

pub mod args;
pub mod commands;
pub mod error;
pub mod manifest;
pub mod sweep;

pub use args::Cli;
pub use error::{CliError, CliResult};

use args::Command;

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth(a) => commands::cmd_synth(a).map(drop),
        Command::Unmix(a) => commands::cmd_unmix(a).map(drop),
        Command::Eval(a) => commands::cmd_eval(a).map(drop),
        Command::Sweep(a) => sweep::cmd_sweep(a).map(drop),
        Command::Replay(a) => commands::cmd_replay(&a.manifest, a.out.as_deref()).map(drop),
    }
}
