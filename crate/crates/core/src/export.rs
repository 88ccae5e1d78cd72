//! Canonical session export.
//!
//! Field order is fixed by the struct definitions and maps are ordered,
//! so equal states serialize to identical bytes. Timestamps, toggles and
//! the artifact are not part of the export.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::catalog::PrincipleCatalog;
use crate::detection::MentionSpan;
use crate::model::{Message, Role, ToggleSet};
use crate::scaffold::{Bookmark, ChapterState, OpacityCurve, Suggestion};
use crate::state::SessionState;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportMessage {
    pub id: String,
    pub index: usize,
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportDocument {
    pub schema_version: String,
    pub session_id: String,
    pub catalog: PrincipleCatalog,
    pub messages: Vec<ExportMessage>,
    pub mentions: Vec<MentionSpan>,
    pub chapters: Vec<ChapterState>,
    pub bookmarks: Vec<Bookmark>,
    pub suggestions: Vec<Suggestion>,
}

impl ExportDocument {
    /// Pretty-printed UTF-8 JSON with a trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("export serializes");
        out.push('\n');
        out
    }

    pub fn from_json(json: &str) -> serde_json::Result<Self> {
        serde_json::from_str(json)
    }
}

pub fn export_session(state: &SessionState) -> ExportDocument {
    ExportDocument {
        schema_version: SCHEMA_VERSION.to_string(),
        session_id: state.session_id.clone(),
        catalog: state.catalog.clone(),
        messages: state
            .messages
            .iter()
            .map(|m| ExportMessage {
                id: m.id.clone(),
                index: m.index,
                role: m.role,
                text: m.text.clone(),
            })
            .collect(),
        mentions: state.mentions.clone(),
        chapters: state.chapters.clone(),
        bookmarks: state.bookmarks.clone(),
        suggestions: state.suggestions.clone(),
    }
}

/// Rebuilds a state from an export. Intended for tests and tooling: the
/// result carries epoch timestamps and default toggles.
pub fn import_session(doc: &ExportDocument) -> SessionState {
    let epoch = DateTime::<Utc>::UNIX_EPOCH;
    let mut toggles = ToggleSet::default();
    for span in &doc.mentions {
        toggles.register(&span.principle_id);
    }
    SessionState {
        session_id: doc.session_id.clone(),
        catalog: doc.catalog.clone(),
        artifact: None,
        messages: doc
            .messages
            .iter()
            .map(|m| Message {
                id: m.id.clone(),
                index: m.index,
                role: m.role,
                text: m.text.clone(),
                created_at: epoch,
            })
            .collect(),
        mentions: doc.mentions.clone(),
        chapters: doc.chapters.clone(),
        bookmarks: doc.bookmarks.clone(),
        suggestions: doc.suggestions.clone(),
        toggles,
        last_seq: 0,
        cues_for_message: None,
        opacity: OpacityCurve::DEFAULT,
        created_at: epoch,
    }
}
