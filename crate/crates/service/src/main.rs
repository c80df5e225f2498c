use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use pcs_core::{FetchPolicy, PatentsViewClient, SnapshotStore};
use pcs_service::{router, AppState};

/// Serves spectrum, seminal-patent and diffusion queries over HTTP.
#[derive(Parser)]
#[command(version)]
struct Args {
    #[arg(long, env = "PCS_ADDR", default_value = "127.0.0.1:8787")]
    addr: SocketAddr,
    /// Snapshot store used for replay and for recording live fetches.
    #[arg(long, env = "PCS_STORE", default_value = ".pcs-store")]
    store: PathBuf,
    /// Directory of built explorer assets, served at `/`.
    #[arg(long, env = "PCS_ASSETS")]
    assets: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    let live = match PatentsViewClient::from_env(FetchPolicy::default()) {
        Ok(client) => client,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let state = Arc::new(AppState::new(SnapshotStore::new(args.store), live));
    let listener = match tokio::net::TcpListener::bind(args.addr).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot listen on {}: {e}", args.addr);
            return ExitCode::FAILURE;
        }
    };
    eprintln!("listening on http://{}", args.addr);
    if let Err(e) = axum::serve(listener, router(state, args.assets)).await {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
