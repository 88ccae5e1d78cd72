//! HTTP service for feedstack sessions.
//!
//! Sessions are event-sourced: each one is a JSON-lines log on disk and
//! the live state is the fold of that log. Clients follow a session over
//! `GET /v1/sessions/{id}/events?from_seq=K`, which replays everything
//! after `K` and then streams new frames as they are committed.

pub mod api;
pub mod client;
pub mod config;
pub mod error;
pub mod hub;
pub mod storage;
pub mod stream;

use std::future::Future;
use std::io;
use std::sync::Arc;

use axum::Router;
use feedstack_core::{Gateway, GatewayError};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::watch;

pub use api::{AppState, SnapshotView};
pub use config::{CatalogRegistry, ConfigError, ServiceConfig};
pub use error::ApiError;
pub use hub::Hub;
pub use storage::{Storage, StorageError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub struct Service {
    hub: Arc<Hub>,
    shutdown: watch::Sender<bool>,
}

impl Service {
    /// Opens storage and catalogs from `config`. Must run inside a tokio
    /// runtime.
    pub fn new(config: &ServiceConfig, gateway: Gateway) -> Result<Self, ServiceError> {
        config.validate()?;
        let storage = Storage::open(&config.storage_dir)?;
        Ok(Self::from_parts(storage, config.catalogs()?, gateway, config.stream_buffer))
    }

    pub fn from_parts(storage: Storage, catalogs: CatalogRegistry, gateway: Gateway, stream_buffer: usize) -> Self {
        let (shutdown, _) = watch::channel(false);
        Self {
            hub: Hub::new(storage, catalogs, gateway, stream_buffer),
            shutdown,
        }
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    pub fn router(&self) -> Router {
        api::router(AppState {
            hub: self.hub.clone(),
            shutdown: self.shutdown.subscribe(),
        })
    }

    /// Serves until `signal` resolves, then closes open event streams and
    /// waits for in-flight requests.
    pub async fn serve(self, listener: TcpListener, signal: impl Future<Output = ()> + Send + 'static) -> io::Result<()> {
        let router = self.router();
        let shutdown = self.shutdown;
        axum::serve(listener, router)
            .with_graceful_shutdown(async move {
                signal.await;
                tracing::info!("shutting down");
                let _ = shutdown.send(true);
            })
            .await
    }
}

/// Binds `host:port` from the config.
pub async fn bind(config: &ServiceConfig) -> Result<TcpListener, ServiceError> {
    let addr = format!("{}:{}", config.host, config.port);
    TcpListener::bind(&addr)
        .await
        .map_err(|source| ServiceError::Bind { addr, source })
}
