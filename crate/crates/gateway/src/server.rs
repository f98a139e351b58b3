use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use tokio::sync::{mpsc, watch};

use crate::api::{router, AppState, Job};
use crate::service::{Service, ServiceConfig, ServiceError, SharedRead};
use crate::token::TokenIssuer;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
    pub data_dir: PathBuf,
    pub seed: Option<u64>,
    pub admin_token: String,
    pub token_secret: String,
    pub token_ttl_secs: u64,
    pub logical_clock: bool,
    pub sync: bool,
    pub snapshot_every: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Config(String),
}

/// Runs commands one at a time on a dedicated thread, publishing a fresh
/// read model whenever the log grows.
pub fn spawn_writer(mut service: Service) -> (mpsc::Sender<Job>, watch::Receiver<SharedRead>) {
    let (tx, mut rx) = mpsc::channel::<Job>(256);
    let (read_tx, read_rx) = watch::channel(Arc::new(service.read_model()));
    std::thread::Builder::new()
        .name("crowdre-writer".into())
        .spawn(move || {
            let mut published = service.read_model().events;
            while let Some((cmd, reply)) = rx.blocking_recv() {
                let result = service.execute(cmd);
                let events = service.orchestrator().log().len();
                if events != published {
                    read_tx.send_replace(Arc::new(service.read_model()));
                    published = events;
                }
                let _ = reply.send(result);
            }
        })
        .expect("spawn writer thread");
    (tx, read_rx)
}

/// Opens the campaign and builds the shared application state.
pub fn build_app(cfg: &ServeConfig) -> Result<AppState, ServeError> {
    if cfg.admin_token.is_empty() {
        return Err(ServeError::Config("an admin token is required (CROWDRE_ADMIN_TOKEN)".into()));
    }
    if cfg.token_secret.is_empty() {
        return Err(ServeError::Config("a token secret is required (CROWDRE_TOKEN_SECRET)".into()));
    }
    let service = Service::open(&ServiceConfig {
        data_dir: cfg.data_dir.clone(),
        seed: cfg.seed,
        logical_clock: cfg.logical_clock,
        sync: cfg.sync,
        snapshot_every: cfg.snapshot_every,
    })?;
    let r = service.recovery();
    tracing::info!(
        snapshot_seq = ?r.snapshot_seq,
        events = r.events,
        discarded_bytes = r.discarded_bytes,
        enqueued = r.enqueued,
        "recovered"
    );
    let campaign = Arc::new(service.campaign().clone());
    let dataset = Arc::new(service.dataset().clone());
    let taxonomy = Arc::new(service.taxonomy().clone());
    let (commands, read) = spawn_writer(service);
    Ok(AppState {
        commands,
        read,
        campaign,
        dataset,
        taxonomy,
        tokens: TokenIssuer::new(cfg.token_secret.clone(), cfg.token_ttl_secs),
        admin_token: cfg.admin_token.as_str().into(),
    })
}

pub async fn serve(cfg: ServeConfig) -> Result<(), ServeError> {
    let app = build_app(&cfg)?;
    let addr = format!("{}:{}", cfg.host, cfg.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|source| ServeError::Bind { addr: addr.clone(), source })?;
    let local: SocketAddr = listener.local_addr()?;
    println!("listening on {local}");
    use std::io::Write;
    std::io::stdout().flush()?;
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
