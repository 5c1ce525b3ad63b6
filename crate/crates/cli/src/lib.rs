//! Command-line front end: argument parsing, report rendering and exit codes.

pub mod args;
pub mod commands;
pub mod failure;
pub mod inputs;
pub mod svg;

use std::ffi::OsString;
use std::io::Write;

use clap::error::ErrorKind;
use clap::Parser;

pub use args::{Cli, Command, ReportFormat};
pub use failure::{Failure, EXIT_OK, EXIT_TOLERANCE, EXIT_USAGE, EXIT_VALIDATION};

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<(), Failure> {
    match &cli.command {
        Command::Waterline(a) => commands::cmd_waterline(a, stdout),
        Command::Gap(a) => commands::cmd_gap(a, stdout),
        Command::Sweep(a) => commands::cmd_sweep(a, stdout),
        Command::Simulate(a) => commands::cmd_simulate(a, stdout),
        Command::Project(a) => commands::cmd_project(a, stdout),
        Command::Zoo { action } => commands::cmd_zoo(action, stdout),
    }
}

/// Parse `args` (program name first), run the command and return the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let shown = e.render();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = write!(stdout, "{shown}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{shown}");
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "error: {f}");
            f.code
        }
    }
}
