//! Live sessions: the single-writer pipeline, persistence and fan-out.
//!
//! Every session sits behind its own mutex. A command runs under that
//! lock, appends its frames to the log and publishes them before the lock
//! is released, so the log, the in-memory history and every subscriber see
//! the same order. Materials, cues and assistant replies run on the
//! blocking pool and re-enter the pipeline when they finish.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::Utc;
use feedstack_core::export::export_session;
use feedstack_core::model::ACCEPTED_MEDIA_TYPES;
use feedstack_core::session::Job;
use feedstack_core::{
    AnalyzerSet, DesignArtifact, ErrorCode, EventFrame, Gateway, LlmAnalyzer, PrincipleCatalog, Role, Session,
    SessionSeed, SessionState,
};
use tokio::runtime::Handle;
use tokio::sync::broadcast;

use crate::config::CatalogRegistry;
use crate::error::ApiError;
use crate::storage::{is_valid_session_id, Storage};

struct Live {
    session: Session,
    history: Vec<EventFrame>,
    analyzers: AnalyzerSet,
    /// Set when the log could not be written; the handle is then retired
    /// and the session reloaded from disk on next use.
    broken: bool,
}

pub struct SessionHandle {
    id: String,
    live: Mutex<Live>,
    tx: broadcast::Sender<EventFrame>,
    pending: AtomicUsize,
}

impl SessionHandle {
    fn lock(&self) -> Result<MutexGuard<'_, Live>, ApiError> {
        let live = self.live.lock().unwrap_or_else(|poisoned| poisoned.into_inner());
        if live.broken {
            return Err(ApiError::internal(format!("session {:?} is being reloaded", self.id)));
        }
        Ok(live)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn pending_jobs(&self) -> usize {
        self.pending.load(Ordering::SeqCst)
    }
}

/// Decrements the pending-job counter when dropped.
struct PendingGuard(Arc<SessionHandle>);

impl Drop for PendingGuard {
    fn drop(&mut self) {
        self.0.pending.fetch_sub(1, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, Default)]
pub struct NewSession {
    pub session_id: Option<String>,
    pub catalog_id: Option<String>,
    pub artifact: Option<DesignArtifact>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Posted {
    pub message_id: String,
    pub seq: u64,
}

pub struct Snapshot {
    pub state: SessionState,
    pub pending_jobs: usize,
}

/// Frames already logged past a cursor plus a receiver for later ones.
pub struct Subscription {
    pub backlog: Vec<EventFrame>,
    pub live: broadcast::Receiver<EventFrame>,
    pub last_seq: u64,
}

pub struct Hub {
    storage: Storage,
    catalogs: CatalogRegistry,
    gateway: Arc<Gateway>,
    stream_buffer: usize,
    runtime: Handle,
    sessions: Mutex<HashMap<String, Arc<SessionHandle>>>,
}

impl Hub {
    /// Must be called from within a tokio runtime; background jobs are
    /// spawned onto it.
    pub fn new(storage: Storage, catalogs: CatalogRegistry, gateway: Gateway, stream_buffer: usize) -> Arc<Self> {
        Arc::new(Self {
            storage,
            catalogs,
            gateway: Arc::new(gateway),
            stream_buffer: stream_buffer.max(1),
            runtime: Handle::current(),
            sessions: Mutex::new(HashMap::new()),
        })
    }

    pub fn storage(&self) -> &Storage {
        &self.storage
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    fn analyzers(&self, catalog: &PrincipleCatalog) -> AnalyzerSet {
        let set = AnalyzerSet::lexicon_only(catalog);
        if self.gateway.config().detect {
            set.with(Box::new(LlmAnalyzer::new(self.gateway.clone())))
        } else {
            set
        }
    }

    fn install(&self, session: Session, history: Vec<EventFrame>) -> Arc<SessionHandle> {
        let (tx, _) = broadcast::channel(self.stream_buffer);
        let analyzers = self.analyzers(&session.state().catalog);
        Arc::new(SessionHandle {
            id: session.id().to_string(),
            live: Mutex::new(Live {
                session,
                history,
                analyzers,
                broken: false,
            }),
            tx,
            pending: AtomicUsize::new(0),
        })
    }

    fn registry(&self) -> MutexGuard<'_, HashMap<String, Arc<SessionHandle>>> {
        self.sessions.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    pub fn create(&self, req: NewSession) -> Result<String, ApiError> {
        let catalog = self
            .catalogs
            .get(req.catalog_id.as_deref())
            .ok_or_else(|| ApiError::not_found(format!("no catalog {:?}", req.catalog_id.unwrap_or_default())))?
            .clone();
        let session_id = match req.session_id {
            Some(id) if is_valid_session_id(&id) => id,
            Some(id) => {
                return Err(ApiError::validation(format!(
                    "session id {id:?} must be 1-64 characters of [A-Za-z0-9_-]"
                )))
            }
            None => uuid::Uuid::new_v4().simple().to_string(),
        };
        let seed = SessionSeed {
            session_id: session_id.clone(),
            catalog,
            artifact: req.artifact,
            created_at: Utc::now(),
            opacity: Default::default(),
        };
        let session = Session::from_seed(seed.clone())?;
        let mut registry = self.registry();
        self.storage.create(&seed)?;
        registry.insert(session_id.clone(), self.install(session, Vec::new()));
        tracing::info!(session = %session_id, "session created");
        Ok(session_id)
    }

    /// Returns the live handle, loading the session from its log if needed.
    pub fn handle(&self, session_id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        let mut registry = self.registry();
        if let Some(handle) = registry.get(session_id) {
            return Ok(handle.clone());
        }
        let log = self
            .storage
            .load(session_id)?
            .ok_or_else(|| ApiError::session_not_found(session_id))?;
        let session = Session::restore(log.seed, &log.frames)?;
        let handle = self.install(session, log.frames);
        registry.insert(session_id.to_string(), handle.clone());
        Ok(handle)
    }

    fn retire(&self, handle: &SessionHandle) {
        let mut registry = self.registry();
        if registry.get(&handle.id).is_some_and(|h| std::ptr::eq(h.as_ref(), handle)) {
            registry.remove(&handle.id);
        }
    }

    /// Persists and publishes frames. Called with the session lock held.
    fn commit(&self, handle: &SessionHandle, live: &mut Live, frames: Vec<EventFrame>) -> Result<(), ApiError> {
        if let Err(err) = self.storage.append(&handle.id, &frames) {
            live.broken = true;
            self.retire(handle);
            return Err(err.into());
        }
        for frame in frames {
            let _ = handle.tx.send(frame.clone());
            live.history.push(frame);
        }
        Ok(())
    }

    pub fn post_message(
        self: &Arc<Self>,
        session_id: &str,
        role: Role,
        text: &str,
        auto_reply: bool,
    ) -> Result<Posted, ApiError> {
        let handle = self.handle(session_id)?;
        let mut live = handle.lock()?;
        let Live { session, analyzers, .. } = &mut *live;
        let appended = session.append_message(role, text, analyzers)?;
        let reply = if auto_reply { session.reply_request() } else { None };
        let seq = appended.frames[0].seq;
        self.commit(&handle, &mut live, appended.frames)?;
        self.spawn_jobs(&handle, appended.jobs);
        if let Some(request) = reply {
            handle.pending.fetch_add(1, Ordering::SeqCst);
            let guard = PendingGuard(handle.clone());
            let hub = self.clone();
            self.runtime.spawn_blocking(move || {
                let reply = hub.gateway.complete(&request);
                if let Err(err) = hub.finish_reply(&guard.0, reply) {
                    tracing::error!(session = %guard.0.id, error = %err, "assistant reply not recorded");
                }
            });
        }
        Ok(Posted {
            message_id: appended.message.id,
            seq,
        })
    }

    fn finish_reply(
        self: &Arc<Self>,
        handle: &Arc<SessionHandle>,
        reply: Result<String, feedstack_core::GatewayError>,
    ) -> Result<(), ApiError> {
        let mut live = handle.lock()?;
        let Live { session, analyzers, .. } = &mut *live;
        let outcome = match reply {
            Ok(text) => session.append_message(Role::Assistant, &text, analyzers).map_err(|e| e.to_string()),
            Err(err) => Err(err.to_string()),
        };
        match outcome {
            Ok(appended) => {
                self.commit(handle, &mut live, appended.frames)?;
                self.spawn_jobs(handle, appended.jobs);
            }
            Err(detail) => {
                tracing::warn!(session = %handle.id, %detail, "assistant reply failed");
                let frame = session.report_error(ErrorCode::GatewayDegraded, &format!("assistant reply unavailable: {detail}"))?;
                self.commit(handle, &mut live, vec![frame])?;
            }
        }
        Ok(())
    }

    fn spawn_jobs(self: &Arc<Self>, handle: &Arc<SessionHandle>, jobs: Vec<Job>) {
        for job in jobs {
            handle.pending.fetch_add(1, Ordering::SeqCst);
            let guard = PendingGuard(handle.clone());
            let hub = self.clone();
            self.runtime.spawn_blocking(move || {
                let handle = &guard.0;
                let result = match job {
                    Job::Materials(job) => {
                        let materials = job.run(&hub.gateway);
                        hub.record(handle, |s| s.finish_materials(&job.principle_id, materials))
                    }
                    Job::Cues(job) => {
                        let outcome = job.run(&hub.gateway);
                        hub.record(handle, |s| s.finish_cues(outcome))
                    }
                };
                if let Err(err) = result {
                    tracing::error!(session = %handle.id, error = %err, "job result not recorded");
                }
            });
        }
    }

    fn record(
        &self,
        handle: &SessionHandle,
        apply: impl FnOnce(&mut Session) -> Result<Option<EventFrame>, feedstack_core::SessionError>,
    ) -> Result<(), ApiError> {
        let mut live = handle.lock()?;
        if let Some(frame) = apply(&mut live.session)? {
            self.commit(handle, &mut live, vec![frame])?;
        }
        Ok(())
    }

    pub fn set_toggle(&self, session_id: &str, principle_id: &str, enabled: bool) -> Result<EventFrame, ApiError> {
        let handle = self.handle(session_id)?;
        let mut live = handle.lock()?;
        let frame = live.session.set_toggle(principle_id, enabled)?;
        self.commit(&handle, &mut live, vec![frame.clone()])?;
        Ok(frame)
    }

    /// Stores the image and points the session at it.
    pub fn set_artifact(
        &self,
        session_id: &str,
        name: &str,
        media_type: &str,
        bytes: &[u8],
    ) -> Result<DesignArtifact, ApiError> {
        let handle = self.handle(session_id)?;
        let artifact = self.store_artifact(name, media_type, bytes)?;
        let mut live = handle.lock()?;
        let frame = live.session.set_artifact(artifact.clone())?;
        self.commit(&handle, &mut live, vec![frame])?;
        Ok(artifact)
    }

    pub fn store_artifact(&self, name: &str, media_type: &str, bytes: &[u8]) -> Result<DesignArtifact, ApiError> {
        if bytes.is_empty() {
            return Err(ApiError::validation("artifact is empty"));
        }
        if !ACCEPTED_MEDIA_TYPES.contains(&media_type) {
            return Err(ApiError::validation(format!("unsupported artifact media type {media_type:?}")));
        }
        let content_ref = self.storage.put_artifact(bytes)?;
        DesignArtifact::new(name, media_type, &content_ref).map_err(|e| ApiError::validation(e.to_string()))
    }

    pub fn artifact(&self, session_id: &str) -> Result<(DesignArtifact, Vec<u8>), ApiError> {
        let handle = self.handle(session_id)?;
        let artifact = handle
            .lock()?
            .session
            .state()
            .artifact
            .clone()
            .ok_or_else(|| ApiError::not_found(format!("session {session_id:?} has no artifact")))?;
        let bytes = self
            .storage
            .get_artifact(&artifact.content_ref)?
            .ok_or_else(|| ApiError::not_found(format!("artifact {} is missing", artifact.content_ref)))?;
        Ok((artifact, bytes))
    }

    pub fn snapshot(&self, session_id: &str) -> Result<Snapshot, ApiError> {
        let handle = self.handle(session_id)?;
        let live = handle.lock()?;
        Ok(Snapshot {
            state: live.session.state().clone(),
            pending_jobs: handle.pending_jobs(),
        })
    }

    /// Canonical export document bytes.
    pub fn export(&self, session_id: &str) -> Result<String, ApiError> {
        let handle = self.handle(session_id)?;
        let live = handle.lock()?;
        Ok(export_session(live.session.state()).to_canonical_json())
    }

    /// Frames with seq greater than `from_seq`, and a receiver positioned
    /// right after them.
    pub fn subscribe(&self, session_id: &str, from_seq: u64) -> Result<Subscription, ApiError> {
        let handle = self.handle(session_id)?;
        let live = handle.lock()?;
        let start = usize::try_from(from_seq).unwrap_or(usize::MAX).min(live.history.len());
        Ok(Subscription {
            backlog: live.history[start..].to_vec(),
            live: handle.tx.subscribe(),
            last_seq: live.session.state().last_seq,
        })
    }

    pub fn session_ids(&self) -> Result<Vec<String>, ApiError> {
        Ok(self.storage.list()?)
    }
}
