use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use sketchdex_core::engine::Index;
use sketchdex_server::{router, AppState};

/// Serves sketch queries over an index file.
#[derive(Debug, Parser)]
#[command(name = "sketchdex-server", version)]
struct Args {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1")]
    bind: std::net::IpAddr,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Index file; without it every data endpoint answers 503.
    #[arg(long)]
    index: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();

    let state = match &args.index {
        Some(path) => {
            let path = path.clone();
            let index = tokio::task::spawn_blocking(move || Index::load(path)).await??;
            let mem = index.memory_report();
            tracing::info!(pages = mem.pages, windows = mem.windows, bytes = mem.total_bytes, "index loaded");
            AppState::new(index)
        }
        None => {
            tracing::warn!("no --index given; serving 503");
            AppState::unloaded()
        }
    };

    let addr = SocketAddr::new(args.bind, args.port);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
