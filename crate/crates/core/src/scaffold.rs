//! The structured layers kept on top of the chat: chapters, bookmarks,
//! highlight visibility, emerging topics and conversational cues.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::catalog::Principle;
use crate::detection::MentionSpan;
use crate::gateway::{stub_cues, stub_materials, CompletionRequest, Gateway, TemplateId};
use crate::model::Role;
use crate::state::SessionState;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScaffoldError {
    #[error("unknown principle {0:?}")]
    UnknownPrinciple(String),
    #[error("unknown message {0:?}")]
    UnknownMessage(String),
    #[error("principle {0:?} has not been mentioned yet")]
    NotMentioned(String),
    #[error("span for message {0:?} does not belong to the latest message")]
    ForeignSpan(String),
}

/// Affine opacity with a floor and a cap, stored to two decimals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpacityCurve {
    pub floor: f64,
    pub step: f64,
    pub cap: f64,
}

impl OpacityCurve {
    pub const DEFAULT: OpacityCurve = OpacityCurve {
        floor: 0.30,
        step: 0.14,
        cap: 1.0,
    };

    pub fn at(&self, mention_count: usize) -> f64 {
        let raw = (self.floor + self.step * mention_count as f64).min(self.cap);
        (raw * 100.0).round() / 100.0
    }
}

impl Default for OpacityCurve {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// `min(1.0, 0.30 + 0.14 × mention_count)`.
pub fn opacity_for_count(mention_count: usize) -> f64 {
    OpacityCurve::DEFAULT.at(mention_count)
}

fn two_decimals<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
    let raw = serde_json::value::RawValue::from_string(format!("{value:.2}")).map_err(serde::ser::Error::custom)?;
    raw.serialize(serializer)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChapterStatus {
    Undiscovered,
    PendingMaterials,
    Ready,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyTerm {
    pub term: String,
    pub gloss: String,
}

/// Learning materials shown inside an expanded chapter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Materials {
    pub definition: String,
    pub relation_to_design: String,
    pub key_terms: Vec<KeyTerm>,
    /// Set when the model call failed and the local fallback was used.
    #[serde(default)]
    pub degraded: bool,
}

impl Materials {
    pub fn is_complete(&self) -> bool {
        !self.definition.trim().is_empty()
            && !self.relation_to_design.trim().is_empty()
            && !self.key_terms.is_empty()
            && self.key_terms.iter().all(|k| !k.term.trim().is_empty())
    }
}

/// Points at the `span_index`-th span of message `message_index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExcerptRef {
    pub message_index: usize,
    pub span_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChapterState {
    pub principle_id: String,
    pub status: ChapterStatus,
    pub mention_count: usize,
    #[serde(serialize_with = "two_decimals")]
    pub opacity: f64,
    pub collapsed: bool,
    pub materials: Option<Materials>,
    pub excerpt_refs: Vec<ExcerptRef>,
}

impl ChapterState {
    pub fn new(principle_id: &str, curve: &OpacityCurve) -> Self {
        Self {
            principle_id: principle_id.to_string(),
            status: ChapterStatus::Undiscovered,
            mention_count: 0,
            opacity: curve.at(0),
            collapsed: true,
            materials: None,
            excerpt_refs: Vec::new(),
        }
    }
}

/// A chapter change caused by one message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChapterDelta {
    pub principle_id: String,
    pub previous_count: usize,
    pub chapter: ChapterState,
}

impl ChapterDelta {
    /// True when this delta carries the principle's first mention.
    pub fn is_first_mention(&self) -> bool {
        self.previous_count == 0 && self.chapter.mention_count > 0
    }
}

/// Folds the spans of the just-appended message into the chapters.
pub fn update_chapters(state: &SessionState, new_spans: &[MentionSpan]) -> Result<Vec<ChapterDelta>, ScaffoldError> {
    let Some(latest) = state.messages.last() else {
        return match new_spans.first() {
            Some(span) => Err(ScaffoldError::ForeignSpan(span.message_id.clone())),
            None => Ok(Vec::new()),
        };
    };
    let mut per_principle: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (span_index, span) in new_spans.iter().enumerate() {
        if span.message_id != latest.id {
            return Err(ScaffoldError::ForeignSpan(span.message_id.clone()));
        }
        let rank = state
            .catalog
            .rank(&span.principle_id)
            .ok_or_else(|| ScaffoldError::UnknownPrinciple(span.principle_id.clone()))?;
        per_principle.entry(rank).or_default().push(span_index);
    }
    Ok(per_principle
        .into_iter()
        .map(|(rank, span_indices)| {
            let before = &state.chapters[rank];
            let mut chapter = before.clone();
            chapter.mention_count += span_indices.len();
            chapter.opacity = state.opacity.at(chapter.mention_count);
            chapter.excerpt_refs.extend(span_indices.into_iter().map(|span_index| ExcerptRef {
                message_index: latest.index,
                span_index,
            }));
            if chapter.status == ChapterStatus::Undiscovered {
                chapter.status = ChapterStatus::PendingMaterials;
            }
            ChapterDelta {
                principle_id: chapter.principle_id.clone(),
                previous_count: before.mention_count,
                chapter,
            }
        })
        .collect())
}

/// A scrub-bar marker: principle discussed in a message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bookmark {
    pub principle_id: String,
    pub message_index: usize,
    pub position: f64,
}

/// One bookmark per (principle, message) pair, ordered by message then
/// catalog order; `position = index / max(1, N - 1)`.
pub fn compute_bookmarks(state: &SessionState) -> Vec<Bookmark> {
    let index_of: HashMap<&str, usize> = state.messages.iter().map(|m| (m.id.as_str(), m.index)).collect();
    let pairs: BTreeSet<(usize, usize)> = state
        .mentions
        .iter()
        .filter_map(|span| Some((*index_of.get(span.message_id.as_str())?, state.catalog.rank(&span.principle_id)?)))
        .collect();
    let denominator = state.messages.len().saturating_sub(1).max(1) as f64;
    pairs
        .into_iter()
        .map(|(message_index, rank)| Bookmark {
            principle_id: state.catalog.principles[rank].id.clone(),
            message_index,
            position: message_index as f64 / denominator,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum JumpDirective {
    /// Open the chapter's accordion (`collapsed = false`).
    ExpandChapter { principle_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JumpTarget {
    pub message_index: usize,
    pub directive: JumpDirective,
}

/// Where a bookmark click lands: the most recent message mentioning the
/// principle, with that principle's chapter expanded.
pub fn jump_target(state: &SessionState, principle_id: &str) -> Result<JumpTarget, ScaffoldError> {
    let chapter = state
        .chapter(principle_id)
        .ok_or_else(|| ScaffoldError::UnknownPrinciple(principle_id.to_string()))?;
    let message_index = chapter
        .excerpt_refs
        .iter()
        .map(|r| r.message_index)
        .max()
        .ok_or_else(|| ScaffoldError::NotMentioned(principle_id.to_string()))?;
    Ok(JumpTarget {
        message_index,
        directive: JumpDirective::ExpandChapter {
            principle_id: principle_id.to_string(),
        },
    })
}

/// The message's spans whose principle highlight is switched on.
pub fn visible_spans(state: &SessionState, message_id: &str) -> Result<Vec<MentionSpan>, ScaffoldError> {
    if !state.messages.iter().any(|m| m.id == message_id) {
        return Err(ScaffoldError::UnknownMessage(message_id.to_string()));
    }
    Ok(state
        .mentions
        .iter()
        .filter(|s| s.message_id == message_id && state.toggles.is_enabled(&s.principle_id))
        .cloned()
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggestionKind {
    EmergingTopic,
    ConversationalCue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    pub kind: SuggestionKind,
    pub text: String,
    pub principle_id: Option<String>,
    pub rank: usize,
}

/// Catalog principles not yet mentioned, in catalog order.
pub fn emerging_topics(state: &SessionState) -> Vec<Suggestion> {
    state
        .catalog
        .principles
        .iter()
        .zip(&state.chapters)
        .filter(|(_, chapter)| chapter.mention_count == 0)
        .enumerate()
        .map(|(rank, (principle, _))| Suggestion {
            kind: SuggestionKind::EmergingTopic,
            text: format!("Explore {}", principle.name),
            principle_id: Some(principle.id.clone()),
            rank,
        })
        .collect()
}

fn design_name(state: &SessionState) -> String {
    state
        .artifact
        .as_ref()
        .map(|a| a.name.clone())
        .unwrap_or_else(|| "the design".to_string())
}

/// Slices the first balanced JSON value opening with `open` out of model
/// output that may carry prose or code fences around it.
fn extract_json(text: &str, open: char, close: char) -> Option<&str> {
    let start = text.find(open)?;
    let end = text.rfind(close)?;
    (end > start).then(|| &text[start..=end])
}

/// Inputs for one chapter's materials, captured when the principle is
/// first mentioned so the result does not depend on when it is run.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialsJob {
    pub principle_id: String,
    pub request: CompletionRequest,
}

impl MaterialsJob {
    pub fn prepare(principle: &Principle, state: &SessionState) -> Result<Self, ScaffoldError> {
        let chapter = state
            .chapter(&principle.id)
            .ok_or_else(|| ScaffoldError::UnknownPrinciple(principle.id.clone()))?;
        let first = chapter
            .excerpt_refs
            .first()
            .ok_or_else(|| ScaffoldError::NotMentioned(principle.id.clone()))?;
        let key_terms: Vec<KeyTerm> = principle
            .normalized_terms()
            .map(|term| KeyTerm {
                gloss: principle.gloss(&term),
                term,
            })
            .collect();
        let mut seen = BTreeSet::new();
        let excerpts = chapter
            .excerpt_refs
            .iter()
            .filter(|r| seen.insert(r.message_index))
            .filter_map(|r| state.messages.get(r.message_index))
            .map(|m| format!("[{}] {}: {}", m.index, m.role, m.text))
            .collect::<Vec<_>>()
            .join("\n");
        let request = CompletionRequest::new(
            TemplateId::Materials,
            [
                ("principle", principle.name.clone()),
                ("principle_id", principle.id.clone()),
                ("definition", principle.definition.clone()),
                ("design", design_name(state)),
                ("mention_count", chapter.mention_count.to_string()),
                ("first_message", first.message_index.to_string()),
                ("key_terms", serde_json::to_string(&key_terms).expect("key terms serialize")),
                ("excerpts", excerpts),
            ],
        );
        Ok(Self {
            principle_id: principle.id.clone(),
            request,
        })
    }

    /// Calls the gateway; any failure or unusable answer falls back to the
    /// local template with `degraded` set.
    pub fn run(&self, gateway: &Gateway) -> Materials {
        let parsed = gateway
            .complete(&self.request)
            .map_err(|e| e.to_string())
            .and_then(|text| {
                let json = extract_json(&text, '{', '}').ok_or("no JSON object in answer")?;
                serde_json::from_str::<Materials>(json).map_err(|e| e.to_string())
            })
            .and_then(|m| if m.is_complete() { Ok(m) } else { Err("incomplete materials".into()) });
        match parsed {
            Ok(mut materials) => {
                materials.degraded = false;
                materials
            }
            Err(reason) => {
                tracing::warn!(principle = %self.principle_id, %reason, "materials fell back to stub");
                Materials {
                    degraded: true,
                    ..stub_materials(&self.request.variables)
                }
            }
        }
    }
}

/// Generates the learning materials for a mentioned principle.
pub fn generate_materials(principle: &Principle, state: &SessionState, gateway: &Gateway) -> Result<Materials, ScaffoldError> {
    Ok(MaterialsJob::prepare(principle, state)?.run(gateway))
}

pub const MAX_CUES: usize = 3;

/// Inputs for a round of conversational cues.
#[derive(Debug, Clone, PartialEq)]
pub struct CueJob {
    pub principle_id: String,
    pub principle_name: String,
    /// Index of the message that triggered the cues.
    pub after_message: usize,
    pub request: CompletionRequest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CueOutcome {
    pub principle_id: String,
    pub after_message: usize,
    pub suggestions: Vec<Suggestion>,
    pub degraded: bool,
}

impl CueJob {
    /// None until an assistant message exists and some principle has been
    /// mentioned.
    pub fn prepare(state: &SessionState) -> Option<Self> {
        let feedback = state.messages.iter().rev().find(|m| m.role == Role::Assistant)?;
        let last = state.mentions.last()?;
        let principle = state.catalog.get(&last.principle_id)?;
        let request = CompletionRequest::new(
            TemplateId::Cues,
            [
                ("principle", principle.name.clone()),
                ("principle_id", principle.id.clone()),
                ("design", design_name(state)),
                ("feedback", feedback.text.clone()),
            ],
        );
        Some(Self {
            principle_id: principle.id.clone(),
            principle_name: principle.name.clone(),
            after_message: state.messages.len() - 1,
            request,
        })
    }

    pub fn run(&self, gateway: &Gateway) -> CueOutcome {
        let parsed = gateway
            .complete(&self.request)
            .map_err(|e| e.to_string())
            .and_then(|text| {
                let json = extract_json(&text, '[', ']').ok_or("no JSON array in answer")?;
                serde_json::from_str::<Vec<String>>(json).map_err(|e| e.to_string())
            })
            .map(|texts| {
                texts
                    .into_iter()
                    .map(|t| t.trim().to_string())
                    .filter(|t| !t.is_empty())
                    .collect::<Vec<_>>()
            })
            .and_then(|texts| if texts.is_empty() { Err("no cues".into()) } else { Ok(texts) });
        let (texts, degraded) = match parsed {
            Ok(texts) => (texts, false),
            Err(reason) => {
                tracing::warn!(principle = %self.principle_id, %reason, "cues fell back to stub");
                (stub_cues(&self.principle_name), true)
            }
        };
        CueOutcome {
            principle_id: self.principle_id.clone(),
            after_message: self.after_message,
            suggestions: texts
                .into_iter()
                .take(MAX_CUES)
                .enumerate()
                .map(|(rank, text)| Suggestion {
                    kind: SuggestionKind::ConversationalCue,
                    text,
                    principle_id: Some(self.principle_id.clone()),
                    rank,
                })
                .collect(),
            degraded,
        }
    }
}

/// Suggested next user turns about the most recently mentioned principle.
pub fn conversational_cues(state: &SessionState, gateway: &Gateway) -> Vec<Suggestion> {
    CueJob::prepare(state)
        .map(|job| job.run(gateway).suggestions)
        .unwrap_or_default()
}
