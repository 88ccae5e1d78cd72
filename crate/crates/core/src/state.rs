//! Materialized session state and the fold that rebuilds it from frames.
//!
//! A session is its seed (id, catalog, artifact) followed by an ordered
//! list of frames. Everything else in `SessionState` is derived by
//! [`SessionState::apply`], so replaying the same log always yields the
//! same state.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{CatalogError, PrincipleCatalog};
use crate::detection::{fold_char, fold_term, MentionSpan};
use crate::event::{EventFrame, FrameBody};
use crate::model::{DesignArtifact, Message, ToggleSet};
use crate::scaffold::{
    compute_bookmarks, emerging_topics, update_chapters, Bookmark, ChapterState, ChapterStatus, OpacityCurve,
    Suggestion, SuggestionKind,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FoldError {
    #[error("frame for session {found:?} applied to session {expected:?}")]
    SessionMismatch { expected: String, found: String },
    #[error("expected seq {expected}, got {found}")]
    SeqGap { expected: u64, found: u64 },
    #[error("invalid frame {seq}: {reason}")]
    Invalid { seq: u64, reason: String },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

/// Everything a session starts from; the first record of its log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSeed {
    pub session_id: String,
    pub catalog: PrincipleCatalog,
    #[serde(default)]
    pub artifact: Option<DesignArtifact>,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub opacity: OpacityCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub catalog: PrincipleCatalog,
    pub artifact: Option<DesignArtifact>,
    pub messages: Vec<Message>,
    pub mentions: Vec<MentionSpan>,
    /// One chapter per catalog principle, in catalog order.
    pub chapters: Vec<ChapterState>,
    pub bookmarks: Vec<Bookmark>,
    pub suggestions: Vec<Suggestion>,
    pub toggles: ToggleSet,
    pub last_seq: u64,
    pub cues_for_message: Option<usize>,
    pub opacity: OpacityCurve,
    pub created_at: DateTime<Utc>,
}

impl SessionState {
    pub fn initial(seed: &SessionSeed) -> Result<Self, CatalogError> {
        seed.catalog.validate()?;
        let mut state = Self {
            session_id: seed.session_id.clone(),
            catalog: seed.catalog.clone(),
            artifact: seed.artifact.clone(),
            messages: Vec::new(),
            mentions: Vec::new(),
            chapters: seed
                .catalog
                .principles
                .iter()
                .map(|p| ChapterState::new(&p.id, &seed.opacity))
                .collect(),
            bookmarks: Vec::new(),
            suggestions: Vec::new(),
            toggles: ToggleSet::default(),
            last_seq: 0,
            cues_for_message: None,
            opacity: seed.opacity,
            created_at: seed.created_at,
        };
        state.suggestions = emerging_topics(&state);
        Ok(state)
    }

    pub fn chapter(&self, principle_id: &str) -> Option<&ChapterState> {
        self.catalog.rank(principle_id).map(|rank| &self.chapters[rank])
    }

    pub fn message(&self, message_id: &str) -> Option<&Message> {
        self.messages.iter().find(|m| m.id == message_id)
    }

    pub fn spans_of<'a>(&'a self, message_id: &'a str) -> impl Iterator<Item = &'a MentionSpan> + 'a {
        self.mentions.iter().filter(move |s| s.message_id == message_id)
    }

    /// Emerging topics followed by the current cues.
    fn refresh_emerging(&mut self) {
        let cues = self
            .suggestions
            .iter()
            .filter(|s| s.kind == SuggestionKind::ConversationalCue)
            .cloned();
        let mut suggestions = emerging_topics(self);
        suggestions.extend(cues);
        self.suggestions = suggestions;
    }

    fn check_spans(&self, seq: u64, message: &Message, spans: &[MentionSpan]) -> Result<(), FoldError> {
        let chars: Vec<char> = message.text.chars().collect();
        let invalid = |reason: String| Err(FoldError::Invalid { seq, reason });
        let mut last_end = 0;
        for span in spans {
            if span.message_id != message.id {
                return invalid(format!("span for {:?} inside mentions of {:?}", span.message_id, message.id));
            }
            if span.start >= span.end || span.end > chars.len() || span.start < last_end {
                return invalid(format!("span {}..{} out of bounds or overlapping", span.start, span.end));
            }
            if !self.catalog.contains(&span.principle_id) {
                return invalid(format!("unknown principle {:?}", span.principle_id));
            }
            let covered: Vec<char> = chars[span.start..span.end].iter().copied().map(fold_char).collect();
            if covered != fold_term(&span.matched_term) {
                return invalid(format!("matched term {:?} differs from the text", span.matched_term));
            }
            last_end = span.end;
        }
        Ok(())
    }

    /// Applies one frame. Frames must arrive in gapless seq order.
    pub fn apply(&mut self, frame: &EventFrame) -> Result<(), FoldError> {
        if frame.session_id != self.session_id {
            return Err(FoldError::SessionMismatch {
                expected: self.session_id.clone(),
                found: frame.session_id.clone(),
            });
        }
        if frame.seq != self.last_seq + 1 {
            return Err(FoldError::SeqGap {
                expected: self.last_seq + 1,
                found: frame.seq,
            });
        }
        let seq = frame.seq;
        let invalid = |reason: String| FoldError::Invalid { seq, reason };
        match &frame.body {
            FrameBody::MessageAdded { message, .. } => {
                if message.index != self.messages.len() || self.message(&message.id).is_some() {
                    return Err(invalid(format!("message {:?} is out of order", message.id)));
                }
                self.messages.push(message.clone());
                self.bookmarks = compute_bookmarks(self);
            }
            FrameBody::MentionsAdded { message_id, spans } => {
                let latest = self
                    .messages
                    .last()
                    .filter(|m| &m.id == message_id)
                    .ok_or_else(|| invalid(format!("mentions for {message_id:?} are not for the latest message")))?;
                if self.spans_of(message_id).next().is_some() {
                    return Err(invalid(format!("mentions for {message_id:?} already recorded")));
                }
                self.check_spans(seq, latest, spans)?;
                let deltas = update_chapters(self, spans).map_err(|e| invalid(e.to_string()))?;
                for delta in deltas {
                    let rank = self.catalog.rank(&delta.principle_id).expect("checked above");
                    self.chapters[rank] = delta.chapter;
                    self.toggles.register(&delta.principle_id);
                }
                self.mentions.extend(spans.iter().cloned());
                self.bookmarks = compute_bookmarks(self);
                self.refresh_emerging();
            }
            FrameBody::ChapterUpdated(delta) => {
                let rank = self
                    .catalog
                    .rank(&delta.principle_id)
                    .ok_or_else(|| invalid(format!("unknown principle {:?}", delta.principle_id)))?;
                self.chapters[rank] = delta.chapter.clone();
            }
            FrameBody::BookmarksUpdated { bookmarks } => {
                self.bookmarks = bookmarks.clone();
            }
            FrameBody::SuggestionsUpdated {
                suggestions,
                cues_for_message,
                ..
            } => {
                self.suggestions = suggestions.clone();
                self.cues_for_message = *cues_for_message;
            }
            FrameBody::MaterialsReady { principle_id, materials } => {
                let rank = self
                    .catalog
                    .rank(principle_id)
                    .ok_or_else(|| invalid(format!("unknown principle {principle_id:?}")))?;
                let chapter = &mut self.chapters[rank];
                if chapter.mention_count == 0 {
                    return Err(invalid(format!("materials for unmentioned principle {principle_id:?}")));
                }
                chapter.materials = Some(materials.clone());
                chapter.status = ChapterStatus::Ready;
            }
            FrameBody::TogglesUpdated { principle_id, enabled } => {
                if !self.catalog.contains(principle_id) {
                    return Err(invalid(format!("unknown principle {principle_id:?}")));
                }
                self.toggles.set(principle_id, *enabled);
            }
            FrameBody::ArtifactUpdated { artifact } => {
                self.artifact = Some(artifact.clone());
            }
            FrameBody::Error { .. } => {}
        }
        self.last_seq = seq;
        Ok(())
    }
}

/// Rebuilds a session from its seed and log.
pub fn fold<'a>(seed: &SessionSeed, frames: impl IntoIterator<Item = &'a EventFrame>) -> Result<SessionState, FoldError> {
    let mut state = SessionState::initial(seed)?;
    for frame in frames {
        state.apply(frame)?;
    }
    Ok(state)
}
