//! Command-line front end for the `diffgame` solvers.
//!
//! Every command reads a scenario (a TOML file or a built-in name), applies
//! `--set section.key=value` overrides, writes CSV/SVG files plus a
//! `run_record.txt`, and ends its output with a `STATUS key=value...` line.

pub mod commands;
pub mod config;
pub mod output;
pub mod scenarios;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use output::{Status, Verdict};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] diffgame::Error),
}

impl CliError {
    /// 1 for bad input, 2 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Core(diffgame::Error::InvalidParameter(_))
            | CliError::Core(diffgame::Error::DimensionMismatch { .. }) => 1,
            CliError::Core(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            1 => "validation",
            _ => "numerical",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "diffgame", version, about = "Two-player differential game solvers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario file.
    #[arg(long, conflicts_with = "scenario")]
    pub config: Option<PathBuf>,
    /// Built-in scenario name (see `list-scenarios`).
    #[arg(long)]
    pub scenario: Option<String>,
    /// Override a setting, e.g. `--set game.gamma=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (same as `--set output.dir=...`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the value-gradient field and reconstruct the values.
    SolvePfield(Common),
    /// Simulate the closed-loop delay equation.
    Simulate(Common),
    /// Discounted costs, tail bounds and optional delay ladder.
    Cost(Common),
    /// Run a published example under every sign reading.
    Reproduce {
        /// Example id such as 4.2.1; optional when a scenario is given.
        id: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Sampled unilateral-deviation test of an equilibrium.
    NashCheck(Common),
    /// Small-noise second-moment ladder against the master equation.
    LdpCheck(Common),
    /// Reduce linear games to kernel form and verify the reduction.
    ReduceLinear(Common),
    /// Growth, jump and Hamiltonian checks of a solved field.
    AdmissibilityCheck(Common),
    /// Print the built-in scenario names.
    ListScenarios,
    /// Print a built-in scenario file.
    ShowScenario { name: String },
}

/// Parses `args` (including the program name), runs the command and writes
/// its report to `out`. Returns the process exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = write!(out, "{e}");
            if code != 0 {
                let _ = writeln!(out, "{}", Status::new(Verdict::Error).with("kind", "usage"));
            }
            return code;
        }
    };
    let status = match commands::dispatch(cli.command, out) {
        Ok(status) => status,
        Err(e) => {
            let _ = writeln!(out, "error: {}", e.to_string().trim_end());
            let mut s = Status::new(Verdict::Error).with("kind", e.kind());
            s.error_code = e.exit_code();
            s
        }
    };
    let _ = writeln!(out, "{status}");
    status.exit_code()
}
