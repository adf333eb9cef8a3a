use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Parser;
use survkit::artifact::ModelArtifact;
use survkit_service::{router, AppState};

#[derive(Parser)]
#[command(name = "survkit-serve", version, about = "Serve predictions from a survkit model artifact")]
struct Args {
    /// Model artifact written by `survkit train`; without it every model
    /// endpoint answers 503.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Concurrent prediction workers.
    #[arg(long, default_value_t = 4)]
    workers: usize,
}

#[tokio::main]
async fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let args = Args::parse();
    let artifact = match &args.model {
        Some(path) => match ModelArtifact::load(path) {
            Ok(a) => {
                tracing::info!(model = %path.display(), kind = a.model.kind().name(), "artifact loaded");
                Some(a)
            }
            Err(e) => {
                eprintln!("failed to load {}: {e}", path.display());
                std::process::exit(2);
            }
        },
        None => {
            tracing::warn!("no artifact given; model endpoints will return 503");
            None
        }
    };
    let app = router(AppState::new(artifact, args.workers));
    let listener = tokio::net::TcpListener::bind(args.addr).await.unwrap_or_else(|e| {
        eprintln!("cannot bind {}: {e}", args.addr);
        std::process::exit(2);
    });
    tracing::info!(addr = %args.addr, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .expect("server error");
}
