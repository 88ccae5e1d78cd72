//! Event frames: the ordered unit of both the push stream and the
//! persisted session log.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::detection::MentionSpan;
use crate::model::{DesignArtifact, Message};
use crate::scaffold::{Bookmark, ChapterDelta, Materials, Suggestion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NotFound,
    Validation,
    Conflict,
    GatewayDegraded,
    Internal,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::NotFound => "not_found",
            ErrorCode::Validation => "validation",
            ErrorCode::Conflict => "conflict",
            ErrorCode::GatewayDegraded => "gateway_degraded",
            ErrorCode::Internal => "internal",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum FrameBody {
    MessageAdded {
        message: Message,
        /// Detection diagnostics, e.g. an analyzer that failed.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        warnings: Vec<String>,
    },
    MentionsAdded {
        message_id: String,
        spans: Vec<MentionSpan>,
    },
    ChapterUpdated(ChapterDelta),
    BookmarksUpdated {
        bookmarks: Vec<Bookmark>,
    },
    SuggestionsUpdated {
        suggestions: Vec<Suggestion>,
        /// Message whose reply produced the current cues.
        cues_for_message: Option<usize>,
        #[serde(default)]
        degraded: bool,
    },
    MaterialsReady {
        principle_id: String,
        materials: Materials,
    },
    TogglesUpdated {
        principle_id: String,
        enabled: bool,
    },
    ArtifactUpdated {
        artifact: DesignArtifact,
    },
    Error {
        code: ErrorCode,
        detail: String,
    },
}

impl FrameBody {
    pub fn kind(&self) -> &'static str {
        match self {
            FrameBody::MessageAdded { .. } => "message_added",
            FrameBody::MentionsAdded { .. } => "mentions_added",
            FrameBody::ChapterUpdated(_) => "chapter_updated",
            FrameBody::BookmarksUpdated { .. } => "bookmarks_updated",
            FrameBody::SuggestionsUpdated { .. } => "suggestions_updated",
            FrameBody::MaterialsReady { .. } => "materials_ready",
            FrameBody::TogglesUpdated { .. } => "toggles_updated",
            FrameBody::ArtifactUpdated { .. } => "artifact_updated",
            FrameBody::Error { .. } => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventFrame {
    pub seq: u64,
    pub session_id: String,
    #[serde(flatten)]
    pub body: FrameBody,
    pub at: DateTime<Utc>,
}

impl EventFrame {
    pub fn kind(&self) -> &'static str {
        self.body.kind()
    }

    /// One JSON line, without the trailing newline.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("frames serialize")
    }
}
