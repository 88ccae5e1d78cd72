//! `serve`.

use std::path::PathBuf;

use feedstack_core::{Gateway, GatewayMode};
use feedstack_service::{Service, ServiceConfig, ServiceError};

use crate::{CliError, LlmMode};

pub struct ServeArgs {
    pub port: Option<u16>,
    pub config: Option<PathBuf>,
    pub llm: Option<LlmMode>,
    pub storage_dir: Option<PathBuf>,
}

fn config(args: &ServeArgs) -> Result<ServiceConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => ServiceConfig::load(path).map_err(|e| CliError::Config(e.to_string()))?,
        None => ServiceConfig::default(),
    };
    if let Some(port) = args.port {
        config.port = port;
    }
    if let Some(dir) = &args.storage_dir {
        config.storage_dir = dir.clone();
    }
    if let Some(llm) = args.llm {
        config.gateway.mode = match llm {
            LlmMode::Stub => GatewayMode::Stub,
            LlmMode::Live => GatewayMode::Live,
        };
    }
    Ok(config)
}

pub fn serve(args: ServeArgs) -> Result<(), CliError> {
    let config = config(&args)?;
    let gateway = Gateway::from_config(config.gateway.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime.block_on(async move {
        let service = Service::new(&config, gateway).map_err(|e| match e {
            ServiceError::Config(e) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        })?;
        let listener = feedstack_service::bind(&config)
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let addr = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
        eprintln!("feedstack listening on http://{addr}");
        service
            .serve(listener, shutdown_signal())
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut signal) => {
                signal.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
}
