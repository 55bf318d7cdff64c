use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use causalread::corpus::load_corpus;
use causalread::experiment::Store;
use causalread_server::{bind, serve, AppState};
use clap::Args;
use serde::Serialize;

use crate::{require_exists, runtime, CliResult, FormatArg};

#[derive(Args, Debug, Clone, Serialize)]
pub struct ServeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "csk")]
    pub format: FormatArg,
    /// Append-only event log; replayed on start.
    #[arg(long, default_value = "events.jsonl")]
    pub log: PathBuf,
    /// Port 0 picks a free port; the bound address is printed on stderr.
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Base seed for sessions created without one.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Serves until SIGINT. Events are synced as they are accepted, so the log
/// never holds a partial line after shutdown.
pub fn cmd_serve(args: &ServeArgs) -> CliResult<()> {
    require_exists(&args.corpus, "corpus")?;
    let corpus = load_corpus(&args.corpus, args.format.into()).map_err(runtime)?;
    let store = Store::open(&args.log, Arc::new(corpus)).map_err(runtime)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(runtime)?;
    rt.block_on(async {
        let listener = bind(args.addr).await.map_err(runtime)?;
        let local = listener.local_addr().map_err(runtime)?;
        eprintln!("listening on http://{local}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        serve(listener, AppState::new(store, args.seed), shutdown).await.map_err(runtime)?;
        eprintln!("shut down cleanly");
        Ok(())
    })
}
