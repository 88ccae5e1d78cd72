//! The session state machine.
//!
//! Commands validate their input, compute what changed and emit frames.
//! Each frame is applied to the state through the same fold used for
//! replay, so the live state and a replayed log can never drift apart.
//! Slow work (materials, cues) is returned as [`Job`]s; the caller runs
//! them wherever it likes and feeds the results back.

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::catalog::{CatalogError, PrincipleCatalog};
use crate::detection::{analyze_message, AnalyzerSet};
use crate::event::{ErrorCode, EventFrame, FrameBody};
use crate::gateway::{CompletionRequest, Gateway, TemplateId};
use crate::model::{DesignArtifact, Message, Role};
use crate::scaffold::{emerging_topics, update_chapters, CueJob, CueOutcome, Materials, MaterialsJob, ScaffoldError};
use crate::state::{FoldError, SessionSeed, SessionState};

/// How many earlier turns are quoted in an assistant-reply prompt.
const REPLY_CONTEXT_TURNS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SessionError {
    #[error("message text is empty")]
    EmptyText,
    #[error("unknown principle {0:?}")]
    UnknownPrinciple(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Scaffold(#[from] ScaffoldError),
    #[error(transparent)]
    Fold(#[from] FoldError),
}

/// Deferred work produced by a command.
#[derive(Debug, Clone, PartialEq)]
pub enum Job {
    Materials(MaterialsJob),
    Cues(CueJob),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Appended {
    pub message: Message,
    pub frames: Vec<EventFrame>,
    pub jobs: Vec<Job>,
}

pub type Clock = fn() -> DateTime<Utc>;

#[derive(Debug, Clone)]
pub struct Session {
    seed: SessionSeed,
    state: SessionState,
    /// Newest message whose cue outcome has been accepted.
    cue_anchor: Option<usize>,
    clock: Clock,
}

impl Session {
    pub fn create(
        session_id: &str,
        catalog: PrincipleCatalog,
        artifact: Option<DesignArtifact>,
    ) -> Result<Self, SessionError> {
        Self::from_seed(SessionSeed {
            session_id: session_id.to_string(),
            catalog,
            artifact,
            created_at: Utc::now(),
            opacity: Default::default(),
        })
    }

    pub fn from_seed(seed: SessionSeed) -> Result<Self, SessionError> {
        let state = SessionState::initial(&seed)?;
        Ok(Self {
            seed,
            state,
            cue_anchor: None,
            clock: Utc::now,
        })
    }

    /// Rebuilds a session from its persisted log.
    pub fn restore<'a>(seed: SessionSeed, frames: impl IntoIterator<Item = &'a EventFrame>) -> Result<Self, FoldError> {
        let state = crate::state::fold(&seed, frames)?;
        Ok(Self {
            cue_anchor: state.cues_for_message,
            seed,
            state,
            clock: Utc::now,
        })
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn seed(&self) -> &SessionSeed {
        &self.seed
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn id(&self) -> &str {
        &self.state.session_id
    }

    fn emit(&mut self, body: FrameBody) -> Result<EventFrame, FoldError> {
        let frame = EventFrame {
            seq: self.state.last_seq + 1,
            session_id: self.state.session_id.clone(),
            body,
            at: (self.clock)(),
        };
        self.state.apply(&frame)?;
        Ok(frame)
    }

    /// Appends a message and runs detection, chapter, bookmark and
    /// suggestion updates for it.
    ///
    /// Frames come back in order: `message_added`, `mentions_added` (if
    /// any), one `chapter_updated` per changed chapter, then
    /// `bookmarks_updated` and `suggestions_updated` when those lists
    /// changed.
    pub fn append_message(&mut self, role: Role, text: &str, analyzers: &AnalyzerSet) -> Result<Appended, SessionError> {
        if text.trim().is_empty() {
            return Err(SessionError::EmptyText);
        }
        let bookmarks_before = self.state.bookmarks.clone();
        let suggestions_before = self.state.suggestions.clone();
        let index = self.state.messages.len();
        let message = Message {
            id: Message::id_for_index(index),
            index,
            role,
            text: text.to_string(),
            created_at: (self.clock)(),
        };
        let analysis = analyze_message(&message, &self.state.catalog, analyzers);

        let mut frames = vec![self.emit(FrameBody::MessageAdded {
            message: message.clone(),
            warnings: analysis.warnings,
        })?];
        let mut jobs = Vec::new();
        if !analysis.spans.is_empty() {
            let deltas = update_chapters(&self.state, &analysis.spans)?;
            frames.push(self.emit(FrameBody::MentionsAdded {
                message_id: message.id.clone(),
                spans: analysis.spans,
            })?);
            for delta in deltas {
                let first_mention = delta.is_first_mention();
                let principle_id = delta.principle_id.clone();
                frames.push(self.emit(FrameBody::ChapterUpdated(delta))?);
                if first_mention {
                    let principle = self.state.catalog.get(&principle_id).expect("delta principle is in catalog");
                    jobs.push(Job::Materials(MaterialsJob::prepare(principle, &self.state)?));
                }
            }
        }
        if self.state.bookmarks != bookmarks_before {
            let bookmarks = self.state.bookmarks.clone();
            frames.push(self.emit(FrameBody::BookmarksUpdated { bookmarks })?);
        }
        if self.state.suggestions != suggestions_before {
            let suggestions = self.state.suggestions.clone();
            let cues_for_message = self.state.cues_for_message;
            frames.push(self.emit(FrameBody::SuggestionsUpdated {
                suggestions,
                cues_for_message,
                degraded: false,
            })?);
        }
        if role == Role::Assistant {
            jobs.extend(CueJob::prepare(&self.state).map(Job::Cues));
        }
        Ok(Appended { message, frames, jobs })
    }

    pub fn set_toggle(&mut self, principle_id: &str, enabled: bool) -> Result<EventFrame, SessionError> {
        if !self.state.catalog.contains(principle_id) {
            return Err(SessionError::UnknownPrinciple(principle_id.to_string()));
        }
        Ok(self.emit(FrameBody::TogglesUpdated {
            principle_id: principle_id.to_string(),
            enabled,
        })?)
    }

    pub fn set_artifact(&mut self, artifact: DesignArtifact) -> Result<EventFrame, SessionError> {
        Ok(self.emit(FrameBody::ArtifactUpdated { artifact })?)
    }

    /// Records generated materials. Materials are produced once per
    /// principle; later results are ignored.
    pub fn finish_materials(&mut self, principle_id: &str, materials: Materials) -> Result<Option<EventFrame>, SessionError> {
        let chapter = self
            .state
            .chapter(principle_id)
            .ok_or_else(|| SessionError::UnknownPrinciple(principle_id.to_string()))?;
        if chapter.materials.is_some() {
            return Ok(None);
        }
        Ok(Some(self.emit(FrameBody::MaterialsReady {
            principle_id: principle_id.to_string(),
            materials,
        })?))
    }

    /// Installs a cue outcome unless a newer one has already been accepted.
    pub fn finish_cues(&mut self, outcome: CueOutcome) -> Result<Option<EventFrame>, SessionError> {
        if self.cue_anchor.is_some_and(|anchor| anchor >= outcome.after_message) {
            return Ok(None);
        }
        self.cue_anchor = Some(outcome.after_message);
        let mut suggestions = emerging_topics(&self.state);
        suggestions.extend(outcome.suggestions);
        if suggestions == self.state.suggestions {
            return Ok(None);
        }
        Ok(Some(self.emit(FrameBody::SuggestionsUpdated {
            suggestions,
            cues_for_message: Some(outcome.after_message),
            degraded: outcome.degraded,
        })?))
    }

    /// Logs an out-of-band failure (e.g. the assistant reply could not be
    /// produced).
    pub fn report_error(&mut self, code: ErrorCode, detail: &str) -> Result<EventFrame, SessionError> {
        Ok(self.emit(FrameBody::Error {
            code,
            detail: detail.to_string(),
        })?)
    }

    /// Runs jobs inline, in order, and records their results.
    pub fn run_jobs(&mut self, jobs: Vec<Job>, gateway: &Gateway) -> Result<Vec<EventFrame>, SessionError> {
        let mut frames = Vec::new();
        for job in jobs {
            let frame = match job {
                Job::Materials(job) => {
                    let materials = job.run(gateway);
                    self.finish_materials(&job.principle_id, materials)?
                }
                Job::Cues(job) => self.finish_cues(job.run(gateway))?,
            };
            frames.extend(frame);
        }
        Ok(frames)
    }

    /// Prompt for the assistant's answer to the latest message.
    pub fn reply_request(&self) -> Option<CompletionRequest> {
        let (latest, earlier) = self.state.messages.split_last()?;
        let transcript = earlier
            .iter()
            .skip(earlier.len().saturating_sub(REPLY_CONTEXT_TURNS))
            .map(|m| {
                let speaker = match m.role {
                    Role::User => "Designer",
                    Role::Assistant => "Expert",
                };
                format!("{speaker}: {}", m.text)
            })
            .collect::<Vec<_>>()
            .join("\n");
        let design = self
            .state
            .artifact
            .as_ref()
            .map(|a| a.name.clone())
            .unwrap_or_else(|| "an uploaded design".to_string());
        Some(CompletionRequest::new(
            TemplateId::AssistantReply,
            [
                ("design", design),
                ("transcript", transcript),
                ("user_text", latest.text.clone()),
            ],
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scaffold::ChapterStatus;

    fn session() -> (Session, AnalyzerSet) {
        let catalog = PrincipleCatalog::default_catalog();
        let analyzers = AnalyzerSet::lexicon_only(&catalog);
        (Session::create("s1", catalog, None).unwrap(), analyzers)
    }

    #[test]
    fn first_message_mentions_contrast() {
        let (mut s, analyzers) = session();
        let out = s.append_message(Role::User, "Improve the contrast here", &analyzers).unwrap();
        assert_eq!(out.message.index, 0);
        let kinds: Vec<_> = out.frames.iter().map(|f| f.kind()).collect();
        assert_eq!(
            kinds,
            ["message_added", "mentions_added", "chapter_updated", "bookmarks_updated", "suggestions_updated"]
        );
        let seqs: Vec<_> = out.frames.iter().map(|f| f.seq).collect();
        assert_eq!(seqs, [1, 2, 3, 4, 5]);
        assert_eq!(s.state().mentions.len(), 1);
        let contrast = s.state().chapter("contrast").unwrap();
        assert_eq!(contrast.mention_count, 1);
        assert_eq!(contrast.opacity, 0.44);
        assert_eq!(contrast.status, ChapterStatus::PendingMaterials);
        assert!(matches!(&out.jobs[..], [Job::Materials(j)] if j.principle_id == "contrast"));
    }

    #[test]
    fn message_without_terms_emits_only_message_added() {
        let (mut s, analyzers) = session();
        let out = s.append_message(Role::User, "thanks!", &analyzers).unwrap();
        let kinds: Vec<_> = out.frames.iter().map(|f| f.kind()).collect();
        assert_eq!(kinds, ["message_added"]);
        assert!(out.jobs.is_empty());
    }

    #[test]
    fn blank_text_is_rejected_without_changing_state() {
        let (mut s, analyzers) = session();
        let before = s.state().clone();
        assert_eq!(
            s.append_message(Role::User, " \n\t", &analyzers).unwrap_err(),
            SessionError::EmptyText
        );
        assert_eq!(s.state(), &before);
    }

    #[test]
    fn toggles() {
        let (mut s, _) = session();
        let frame = s.set_toggle("balance", false).unwrap();
        assert_eq!(frame.kind(), "toggles_updated");
        assert!(!s.state().toggles.is_enabled("balance"));
        assert_eq!(
            s.set_toggle("typography", true).unwrap_err(),
            SessionError::UnknownPrinciple("typography".into())
        );
    }

    #[test]
    fn assistant_message_yields_cues_and_materials_once() {
        let (mut s, analyzers) = session();
        let gateway = Gateway::stub();
        let out = s
            .append_message(Role::Assistant, "The layout is not balanced.", &analyzers)
            .unwrap();
        assert_eq!(out.jobs.len(), 2);
        let frames = s.run_jobs(out.jobs, &gateway).unwrap();
        let kinds: Vec<_> = frames.iter().map(|f| f.kind()).collect();
        assert_eq!(kinds, ["materials_ready", "suggestions_updated"]);
        let cues: Vec<_> = s.state().suggestions.iter().filter(|x| x.principle_id.as_deref() == Some("balance")).collect();
        assert_eq!(cues.len(), 3);
        assert_eq!(cues[0].text, "Can you show an example applying Balance?");

        let again = s.append_message(Role::Assistant, "More balance please.", &analyzers).unwrap();
        assert!(again.jobs.iter().all(|j| matches!(j, Job::Cues(_))));
        let frames = s.run_jobs(again.jobs, &gateway).unwrap();
        assert!(frames.is_empty(), "same cues, nothing to emit");
    }

    #[test]
    fn stale_cue_outcome_is_ignored() {
        let (mut s, analyzers) = session();
        let gateway = Gateway::stub();
        let first = s.append_message(Role::Assistant, "Check the contrast.", &analyzers).unwrap();
        let second = s.append_message(Role::Assistant, "Check the grid.", &analyzers).unwrap();
        let cue = |jobs: &[Job]| {
            jobs.iter()
                .find_map(|j| match j {
                    Job::Cues(c) => Some(c.clone()),
                    _ => None,
                })
                .unwrap()
        };
        let newer = cue(&second.jobs).run(&gateway);
        let older = cue(&first.jobs).run(&gateway);
        assert!(s.finish_cues(newer).unwrap().is_some());
        assert!(s.finish_cues(older).unwrap().is_none());
        assert!(s
            .state()
            .suggestions
            .iter()
            .any(|x| x.text == "Why does Alignment and Spacing matter for my design?"));
    }

    #[test]
    fn restore_reproduces_state() {
        let (mut s, analyzers) = session();
        let gateway = Gateway::stub();
        let mut log = Vec::new();
        for (role, text) in [
            (Role::User, "Is the contrast ok?"),
            (Role::Assistant, "The contrast is fine but the grid drifts."),
        ] {
            let out = s.append_message(role, text, &analyzers).unwrap();
            log.extend(out.frames);
            log.extend(s.run_jobs(out.jobs, &gateway).unwrap());
        }
        log.push(s.set_toggle("contrast", false).unwrap());
        let restored = Session::restore(s.seed().clone(), &log).unwrap();
        assert_eq!(restored.state(), s.state());
    }

    #[test]
    fn reply_request_quotes_latest_user_text() {
        let (mut s, analyzers) = session();
        s.append_message(Role::User, "fix the contrast", &analyzers).unwrap();
        let request = s.reply_request().unwrap();
        assert_eq!(request.variables["user_text"], "fix the contrast");
        assert!(request.prompt().unwrap().contains("Designer: fix the contrast"));
    }
}
