use std::path::PathBuf;

use causalread::corpus::Condition;
use causalread::report::{emit_condition_means, read_contrast_csv, render_contrast_table};
use causalread::stats::TrialTable;
use clap::Args;
use serde::Serialize;

use crate::meta::Writer;
use crate::{read_text, require_exists, slug, CliError, CliResult};

#[derive(Args, Debug, Clone, Serialize)]
pub struct ReportArgs {
    /// Contrast CSVs from `analyze`, merged into one table. Repeatable.
    #[arg(long = "contrasts")]
    pub contrasts: Vec<PathBuf>,
    /// Trial tables to summarise as condition means (plot data). Repeatable.
    #[arg(long = "table")]
    pub tables: Vec<PathBuf>,
    /// Means of the log response.
    #[arg(long)]
    pub log: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Without it, everything goes to stdout only.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

pub fn cmd_report(args: &ReportArgs) -> CliResult<()> {
    if args.contrasts.is_empty() && args.tables.is_empty() {
        return Err(CliError::Usage("nothing to report: pass --contrasts or --table".into()));
    }
    for p in args.contrasts.iter().chain(&args.tables) {
        require_exists(p, "input")?;
    }
    let writer = Writer::new("report", args, args.seed);
    let analysis = |e: causalread::report::ReportError| CliError::Analysis(e.to_string());

    if !args.contrasts.is_empty() {
        let mut rows = Vec::new();
        for p in &args.contrasts {
            rows.extend(read_contrast_csv(read_text(p)?.as_bytes()).map_err(analysis)?);
        }
        let rendered = render_contrast_table(&rows).map_err(analysis)?;
        print!("{}", rendered.text);
        if let Some(dir) = &args.out {
            writer.write(&dir.join("table.md"), rendered.text.as_bytes())?;
            writer.write(&dir.join("table.csv"), rendered.csv.as_bytes())?;
        }
    }
    for p in &args.tables {
        let table = TrialTable::read_csv(read_text(p)?.as_bytes()).map_err(|e| CliError::Analysis(e.to_string()))?;
        let present = table.conditions();
        let conds: Vec<Condition> = Condition::ALL.into_iter().filter(|c| present.contains(c)).collect();
        let mut buf = Vec::new();
        emit_condition_means(&table, &conds, args.log, &mut buf).map_err(analysis)?;
        print!("{}", String::from_utf8_lossy(&buf));
        if let Some(dir) = &args.out {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            writer.write(&dir.join(format!("means_{}.csv", slug(&stem))), &buf)?;
        }
    }
    Ok(())
}
