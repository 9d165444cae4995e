use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use cair_cli::server::{limited_router, remote_router, Limits, Role, Upstreams};
use cair_cli::{init_logging, load_hub};
use cair_core::hub::Hub;
use cair_core::knowledge::generate_synthetic_ontology;
use cair_core::planmgr::load_intent_registry;
use clap::Parser;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

/// Serves the hub, plan and dialogue endpoints.
#[derive(Parser)]
#[command(version)]
struct Args {
    #[arg(long, env = "CAIR_ONTOLOGY", default_value = "data/ontology.json")]
    ontology: PathBuf,
    #[arg(long, env = "CAIR_INTENTS", default_value = "data/intents.json")]
    intents: PathBuf,
    /// Generate a synthetic ontology with this many topics instead of
    /// reading --ontology (branching 3, 8 sentences per topic, seed 42).
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, env = "CAIR_CULTURE", default_value = "EN")]
    culture: String,
    #[arg(long, env = "CAIR_BIND", default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, env = "CAIR_WORKERS")]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value = "all")]
    role: Role,
    /// Run as a hub in front of separately deployed services. Needs
    /// --dialogue-url as well.
    #[arg(long, requires = "dialogue_url")]
    plan_url: Option<String>,
    #[arg(long, requires = "plan_url")]
    dialogue_url: Option<String>,
    /// Requests handled at the same time; the rest wait in line.
    #[arg(long)]
    max_concurrent: Option<usize>,
    /// Pad every request to at least this service time, to stand in for a
    /// slower host.
    #[arg(long, default_value_t = 0.0)]
    min_service_ms: f64,
    /// Serve the files of a built browser client under /chat.
    #[arg(long, env = "CAIR_CHAT_DIR")]
    chat_dir: Option<PathBuf>,
}

fn main() -> anyhow::Result<()> {
    init_logging("info");
    let args = Args::parse();

    let router = match (&args.plan_url, &args.dialogue_url) {
        (Some(plan), Some(dialogue)) => remote_router(Upstreams::new(plan, dialogue)),
        _ => {
            let hub = match args.synthetic {
                Some(topics) => {
                    let text = std::fs::read_to_string(&args.intents)
                        .with_context(|| format!("reading {}", args.intents.display()))?;
                    let registry = load_intent_registry(&text)?;
                    Hub::new(&generate_synthetic_ontology(topics, 3, 8, 42), registry, &args.culture)
                }
                None => load_hub(&args.ontology, &args.intents, &args.culture)?,
            };
            for tree in hub.trees() {
                tracing::info!(
                    culture = tree.culture().unwrap_or("-"),
                    topics = tree.len(),
                    sentences = tree.sentence_count(),
                    "dialogue tree ready"
                );
            }
            let limits = Limits {
                max_concurrent: args.max_concurrent,
                min_service: Duration::from_secs_f64(args.min_service_ms.max(0.0) / 1000.0),
            };
            limited_router(Arc::new(hub), args.role, limits)
        }
    };

    let router = match &args.chat_dir {
        Some(dir) => router.nest_service("/chat", ServeDir::new(dir)),
        None => router,
    };
    // Browser clients hosted elsewhere call the API cross-origin.
    let router = router.layer(CorsLayer::permissive());

    let mut builder = tokio::runtime::Builder::new_multi_thread();
    builder.enable_all();
    if let Some(w) = args.workers {
        builder.worker_threads(w.max(1));
    }
    builder.build()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.bind)
            .await
            .with_context(|| format!("binding {}", args.bind))?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        axum::serve(listener, router)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
