//! Scripted transcripts and offline replay.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::PrincipleCatalog;
use crate::detection::AnalyzerSet;
use crate::gateway::Gateway;
use crate::model::Role;
use crate::session::{Session, SessionError};
use crate::state::SessionState;

/// Session id used for offline replays unless the caller picks one.
pub const REPLAY_SESSION_ID: &str = "replay";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptTurn {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptFile {
    pub messages: Vec<TranscriptTurn>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("transcript parse error at line {line}, column {column}: {message}")]
pub struct TranscriptParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl TranscriptFile {
    pub fn from_json(json: &str) -> Result<Self, TranscriptParseError> {
        serde_json::from_str(json).map_err(|e| TranscriptParseError {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("turn {turn}: {source}")]
    Turn { turn: usize, source: SessionError },
    #[error(transparent)]
    Session(#[from] SessionError),
}

/// Replays `turns` into a new session, running every job inline on
/// `gateway` after each turn.
pub fn replay_session(
    session_id: &str,
    catalog: &PrincipleCatalog,
    turns: &[TranscriptTurn],
    gateway: &Gateway,
) -> Result<Session, ReplayError> {
    let mut session = Session::create(session_id, catalog.clone(), None)?;
    let analyzers = AnalyzerSet::lexicon_only(catalog);
    for (turn, entry) in turns.iter().enumerate() {
        let wrap = |source| ReplayError::Turn { turn, source };
        let appended = session.append_message(entry.role, &entry.text, &analyzers).map_err(wrap)?;
        session.run_jobs(appended.jobs, gateway).map_err(wrap)?;
    }
    Ok(session)
}

/// Replays a transcript with the stub gateway.
pub fn replay_transcript(catalog: &PrincipleCatalog, turns: &[TranscriptTurn]) -> Result<SessionState, ReplayError> {
    let gateway = Gateway::stub_for(catalog);
    Ok(replay_session(REPLAY_SESSION_ID, catalog, turns, &gateway)?.state().clone())
}
