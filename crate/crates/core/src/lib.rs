//! Structured layers over an unstructured design-feedback conversation.
//!
//! A [`Session`] owns one conversation. Every message is scanned for
//! principle key terms; the resulting spans drive per-principle chapters
//! (mention counts, opacity, learning materials, excerpt links), scrub-bar
//! bookmarks, toggleable highlights, emerging-topic suggestions and
//! conversational cues. All changes are expressed as [`EventFrame`]s and
//! the state is a fold of those frames.

pub mod catalog;
pub mod detection;
pub mod event;
pub mod export;
pub mod gateway;
pub mod model;
pub mod scaffold;
pub mod session;
pub mod state;
pub mod transcript;

pub use catalog::{CatalogError, Principle, PrincipleCatalog};
pub use detection::{
    analyze_message, detect_mentions_lexicon, merge_results, Analysis, Analyzer, AnalyzerResult, AnalyzerSet,
    AnalyzerSource, Lexicon, LexiconAnalyzer, LlmAnalyzer, MentionSpan,
};
pub use event::{ErrorCode, EventFrame, FrameBody};
pub use export::{export_session, import_session, ExportDocument, SCHEMA_VERSION};
pub use gateway::{CompletionRequest, Gateway, GatewayConfig, GatewayError, GatewayMode, TemplateId};
pub use model::{DesignArtifact, Message, Role, ToggleSet};
pub use scaffold::{
    compute_bookmarks, conversational_cues, emerging_topics, generate_materials, jump_target, opacity_for_count,
    update_chapters, visible_spans, Bookmark, ChapterDelta, ChapterState, ChapterStatus, JumpDirective, JumpTarget,
    Materials, Suggestion, SuggestionKind,
};
pub use session::{Appended, Job, Session, SessionError};
pub use state::{fold, FoldError, SessionSeed, SessionState};
pub use transcript::{replay_session, replay_transcript, TranscriptFile, TranscriptTurn, REPLAY_SESSION_ID};
