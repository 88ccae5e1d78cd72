#![allow(dead_code)]

#[path = "../../../core/tests/support/schema.rs"]
pub mod schema;

use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread::JoinHandle;
use std::time::Duration;

use feedstack_core::{Gateway, PrincipleCatalog, Role, TranscriptFile, TranscriptTurn};
use feedstack_service::api::{CreateSessionRequest, PostMessageRequest};
use feedstack_service::client::Client;
use feedstack_service::{CatalogRegistry, Service, SnapshotView, Storage};
use tempfile::TempDir;
use tokio::sync::oneshot;

pub const IDLE: Duration = Duration::from_secs(30);

pub struct TestServer {
    pub client: Client,
    pub storage_dir: PathBuf,
    _dir: Option<TempDir>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl TestServer {
    pub fn start() -> Self {
        Self::with_gateway(Gateway::stub)
    }

    pub fn with_gateway(gateway: fn() -> Gateway) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut server = Self::start_in(dir.path(), gateway);
        server._dir = Some(dir);
        server
    }

    /// Serves from an existing storage directory (which the caller owns).
    pub fn start_in(storage_dir: &Path, gateway: fn() -> Gateway) -> Self {
        let (addr_tx, addr_rx) = mpsc::channel();
        let (stop_tx, stop_rx) = oneshot::channel::<()>();
        let root = storage_dir.to_path_buf();
        let thread = std::thread::spawn(move || {
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            runtime.block_on(async move {
                let storage = Storage::open(&root).unwrap();
                let service = Service::from_parts(storage, CatalogRegistry::default(), gateway(), 1024);
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                service
                    .serve(listener, async {
                        let _ = stop_rx.await;
                    })
                    .await
                    .unwrap();
            });
        });
        let addr = addr_rx.recv().unwrap();
        Self {
            client: Client::new(&format!("http://{addr}")),
            storage_dir: storage_dir.to_path_buf(),
            _dir: None,
            stop: Some(stop_tx),
            thread: Some(thread),
        }
    }

    /// Stops the server and waits for it to finish.
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }

    pub fn log_path(&self, session_id: &str) -> PathBuf {
        self.storage_dir.join("sessions").join(format!("{session_id}.jsonl"))
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

pub fn fixture() -> Vec<TranscriptTurn> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/transcript_12.json");
    TranscriptFile::from_json(&std::fs::read_to_string(path).unwrap()).unwrap().messages
}

pub fn catalog() -> PrincipleCatalog {
    PrincipleCatalog::default_catalog()
}

pub fn create(client: &Client, session_id: &str) {
    client
        .create_session(&CreateSessionRequest {
            session_id: Some(session_id.to_string()),
            ..Default::default()
        })
        .unwrap();
}

pub fn post_turn(client: &Client, session_id: &str, role: Role, text: &str) {
    client
        .post_message(
            session_id,
            &PostMessageRequest {
                text: text.to_string(),
                role: Some(role),
                auto_reply: Some(false),
            },
        )
        .unwrap();
}

/// Creates `session_id` and posts the given turns verbatim.
pub fn seed(client: &Client, session_id: &str, turns: &[TranscriptTurn]) -> SnapshotView {
    create(client, session_id);
    for turn in turns {
        post_turn(client, session_id, turn.role, &turn.text);
    }
    client.wait_idle(session_id, IDLE).unwrap()
}
