use std::path::PathBuf;

use causalread::corpus::{adapt_trip, load_corpus, parse_trip_jsonl, Corpus};
use clap::{Args, Subcommand};
use serde::Serialize;

use crate::meta::Writer;
use crate::{read_text, require_exists, runtime, CliResult, FormatArg};

#[derive(Args, Debug, Clone, Serialize)]
pub struct TransformArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Format of the input for `shorten`.
    #[arg(long, value_enum, default_value = "csk")]
    pub format: FormatArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Subcommand, Debug, Clone)]
pub enum TransformCmd {
    /// Move event A next to event B (short-distance variant).
    Shorten(TransformArgs),
    /// Convert TRIP story pairs (JSON lines) to the CSK corpus schema.
    Trip(TransformArgs),
}

/// Writes the derived corpus as CSK JSON and returns it.
pub fn cmd_transform(cmd: &TransformCmd) -> CliResult<Corpus> {
    let (name, args) = match cmd {
        TransformCmd::Shorten(a) => ("transform shorten", a),
        TransformCmd::Trip(a) => ("transform trip", a),
    };
    require_exists(&args.input, "input")?;
    let corpus = match cmd {
        TransformCmd::Shorten(a) => load_corpus(&a.input, a.format.into()).map_err(runtime)?.shortened(),
        TransformCmd::Trip(a) => {
            let origin = a.input.display().to_string();
            adapt_trip(&parse_trip_jsonl(&read_text(&a.input)?, &origin).map_err(runtime)?).map_err(runtime)?
        }
    };
    Writer::new(name, args, args.seed).write(&args.out, corpus.to_json().as_bytes())?;
    eprintln!("{}: {} stories -> {}", name, corpus.stories.len(), args.out.display());
    Ok(corpus)
}
