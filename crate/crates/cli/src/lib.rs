//! Command-line front end: corpus transforms, scoring runs, analyses,
//! the experiment service, simulation and reporting.
//!
//! Every file written gets a `<file>.meta.json` sidecar with the tool
//! version, a hash of the command's configuration and the seed.

use std::ffi::OsString;
use std::path::Path;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub mod analyze;
pub mod meta;
pub mod report;
pub mod score;
pub mod serve;
pub mod simulate;
pub mod transform;

pub use analyze::{cmd_analyze, AnalyzeArgs};
pub use report::{cmd_report, ReportArgs};
pub use score::{cmd_score, ScoreArgs};
pub use serve::{cmd_serve, ServeArgs};
pub use simulate::{cmd_simulate, SimulateArgs};
pub use transform::{cmd_transform, TransformArgs, TransformCmd};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Analysis(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 1 analysis error, 2 usage error, 3 runtime error.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Analysis(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "causalread", version, about = "Script-knowledge reading studies: score, analyze, serve, simulate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Region-B surprisal for every story and condition.
    Score(ScoreArgs),
    /// Condition contrasts on surprisal, reading-time or generic trial tables.
    Analyze(AnalyzeArgs),
    /// Derived corpora.
    #[command(subcommand)]
    Transform(TransformCmd),
    /// Run the self-paced reading service until interrupted.
    Serve(ServeArgs),
    /// Synthetic trial tables with known parameters.
    Simulate(SimulateArgs),
    /// Merge contrast tables or emit condition means.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    #[default]
    Csk,
    Trip,
}

impl From<FormatArg> for causalread::corpus::CorpusFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csk => causalread::corpus::CorpusFormat::CskJson,
            FormatArg::Trip => causalread::corpus::CorpusFormat::TripJson,
        }
    }
}

pub fn execute(command: &Command) -> CliResult<()> {
    match command {
        Command::Score(a) => cmd_score(a).map(|_| ()),
        Command::Analyze(a) => cmd_analyze(a).map(|_| ()),
        Command::Transform(t) => cmd_transform(t).map(|_| ()),
        Command::Serve(a) => cmd_serve(a),
        Command::Simulate(a) => cmd_simulate(a).map(|_| ()),
        Command::Report(a) => cmd_report(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub(crate) fn require_exists(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", path.display())))
    }
}

pub(crate) fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))
}

pub(crate) fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// File-name-safe form of a label.
pub(crate) fn slug(s: &str) -> String {
    let mut out: String = s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect();
    while out.contains("__") {
        out = out.replace("__", "_");
    }
    out.trim_matches('_').to_string()
}

