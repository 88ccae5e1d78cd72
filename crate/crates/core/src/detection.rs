//! Principle mention detection.
//!
//! The lexicon matcher is case-insensitive, whole-word and leftmost-longest
//! over Unicode code points. A word boundary is any non-alphanumeric code
//! point or either end of the text, so `high-contrast` contains a match for
//! `contrast`. A space inside a multi-word term only matches U+0020.
//!
//! Other analyzers (an LLM-backed one ships here) can be layered on top;
//! their results are merged with lexicon results taking priority.

use std::cmp::Reverse;
use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::PrincipleCatalog;
use crate::gateway::{CompletionRequest, Gateway, GatewayError, TemplateId};
use crate::model::Message;

/// Case-folds a single code point without changing the code-point count.
/// Characters whose lowercase form expands to several code points are
/// kept unchanged.
pub fn fold_char(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

pub(crate) fn fold_term(term: &str) -> Vec<char> {
    term.chars().map(fold_char).collect()
}

pub fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// An occurrence of a principle key term inside one message. Offsets are
/// code points, end-exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MentionSpan {
    pub message_id: String,
    pub principle_id: String,
    pub start: usize,
    pub end: usize,
    pub matched_term: String,
}

impl MentionSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &MentionSpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone)]
struct Entry {
    term: String,
    principle_id: String,
}

#[derive(Debug, Clone, Default)]
struct Node {
    children: BTreeMap<char, usize>,
    entry: Option<usize>,
}

/// Term → principle view of a catalog, stored as a trie over folded code
/// points.
#[derive(Debug, Clone)]
pub struct Lexicon {
    nodes: Vec<Node>,
    entries: Vec<Entry>,
}

impl Lexicon {
    /// Builds the lexicon. The catalog's own validation guarantees every
    /// folded term maps to a single principle.
    pub fn from_catalog(catalog: &PrincipleCatalog) -> Self {
        let mut lexicon = Lexicon {
            nodes: vec![Node::default()],
            entries: Vec::new(),
        };
        for principle in &catalog.principles {
            for term in principle.normalized_terms() {
                if !term.is_empty() {
                    lexicon.insert(term, &principle.id);
                }
            }
        }
        lexicon
    }

    fn insert(&mut self, term: String, principle_id: &str) {
        let mut node = 0;
        for c in fold_term(&term) {
            node = match self.nodes[node].children.get(&c) {
                Some(&next) => next,
                None => {
                    self.nodes.push(Node::default());
                    let next = self.nodes.len() - 1;
                    self.nodes[node].children.insert(c, next);
                    next
                }
            };
        }
        if self.nodes[node].entry.is_none() {
            self.entries.push(Entry {
                term,
                principle_id: principle_id.to_string(),
            });
            self.nodes[node].entry = Some(self.entries.len() - 1);
        }
    }

    /// Number of distinct (folded) terms.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Principle owning `term`, compared case-insensitively.
    pub fn principle_for(&self, term: &str) -> Option<&str> {
        let mut node = 0;
        for c in fold_term(&crate::catalog::normalize_term(term)) {
            node = *self.nodes[node].children.get(&c)?;
        }
        self.nodes[node]
            .entry
            .map(|e| self.entries[e].principle_id.as_str())
    }

    /// Longest whole-word match starting at `start`, as (end, entry).
    fn longest_at(&self, chars: &[char], folded: &[char], start: usize) -> Option<(usize, usize)> {
        let mut node = 0;
        let mut best = None;
        let mut pos = start;
        while pos < folded.len() {
            match self.nodes[node].children.get(&folded[pos]) {
                Some(&next) => node = next,
                None => break,
            }
            pos += 1;
            if let Some(entry) = self.nodes[node].entry {
                if pos == chars.len() || !is_word_char(chars[pos]) {
                    best = Some((pos, entry));
                }
            }
        }
        best
    }

    /// Scans `text` and returns (start, end, principle_id, term) for each
    /// match in order.
    pub fn find_all<'a>(&'a self, text: &str) -> Vec<(usize, usize, &'a str, &'a str)> {
        let chars: Vec<char> = text.chars().collect();
        let folded: Vec<char> = chars.iter().copied().map(fold_char).collect();
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < chars.len() {
            if pos == 0 || !is_word_char(chars[pos - 1]) {
                if let Some((end, entry)) = self.longest_at(&chars, &folded, pos) {
                    let entry = &self.entries[entry];
                    out.push((pos, end, entry.principle_id.as_str(), entry.term.as_str()));
                    pos = end;
                    continue;
                }
            }
            pos += 1;
        }
        out
    }
}

/// Lexicon detection for one message. Output is sorted by start and
/// non-overlapping.
pub fn detect_mentions_lexicon(message: &Message, lexicon: &Lexicon) -> Vec<MentionSpan> {
    lexicon
        .find_all(&message.text)
        .into_iter()
        .map(|(start, end, principle_id, term)| MentionSpan {
            message_id: message.id.clone(),
            principle_id: principle_id.to_string(),
            start,
            end,
            matched_term: term.to_string(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnalyzerSource {
    Lexicon,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalyzerResult {
    pub spans: Vec<MentionSpan>,
    pub source: AnalyzerSource,
}

#[derive(Debug, Error)]
pub enum AnalyzerError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("malformed analyzer output: {0}")]
    Malformed(String),
}

pub trait Analyzer: Send + Sync {
    fn name(&self) -> &str;
    fn source(&self) -> AnalyzerSource;
    fn analyze(&self, message: &Message, catalog: &PrincipleCatalog) -> Result<AnalyzerResult, AnalyzerError>;
}

#[derive(Debug, Clone)]
pub struct LexiconAnalyzer {
    lexicon: Lexicon,
}

impl LexiconAnalyzer {
    pub fn new(catalog: &PrincipleCatalog) -> Self {
        Self {
            lexicon: Lexicon::from_catalog(catalog),
        }
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }
}

impl Analyzer for LexiconAnalyzer {
    fn name(&self) -> &str {
        "lexicon"
    }

    fn source(&self) -> AnalyzerSource {
        AnalyzerSource::Lexicon
    }

    fn analyze(&self, message: &Message, _catalog: &PrincipleCatalog) -> Result<AnalyzerResult, AnalyzerError> {
        Ok(AnalyzerResult {
            spans: detect_mentions_lexicon(message, &self.lexicon),
            source: AnalyzerSource::Lexicon,
        })
    }
}

#[derive(Debug, Deserialize)]
struct RawSpan {
    principle_id: String,
    start: usize,
    end: usize,
    #[serde(default)]
    matched_term: String,
}

/// Asks the model to locate principle mentions.
pub struct LlmAnalyzer {
    gateway: Arc<Gateway>,
}

impl LlmAnalyzer {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        Self { gateway }
    }
}

impl Analyzer for LlmAnalyzer {
    fn name(&self) -> &str {
        "llm"
    }

    fn source(&self) -> AnalyzerSource {
        AnalyzerSource::Llm
    }

    fn analyze(&self, message: &Message, catalog: &PrincipleCatalog) -> Result<AnalyzerResult, AnalyzerError> {
        let principles = catalog
            .principles
            .iter()
            .map(|p| format!("- {} ({}): {}", p.id, p.name, p.terms.join(", ")))
            .collect::<Vec<_>>()
            .join("\n");
        let request = CompletionRequest::new(
            TemplateId::Detect,
            [("principles", principles), ("text", message.text.clone())],
        );
        let raw = self.gateway.complete(&request)?;
        let parsed: Vec<RawSpan> =
            serde_json::from_str(raw.trim()).map_err(|e| AnalyzerError::Malformed(e.to_string()))?;
        let spans = parsed
            .into_iter()
            .map(|s| MentionSpan {
                message_id: message.id.clone(),
                principle_id: s.principle_id,
                start: s.start,
                end: s.end,
                matched_term: s.matched_term,
            })
            .collect();
        Ok(AnalyzerResult {
            spans,
            source: AnalyzerSource::Llm,
        })
    }
}

/// Why a span was dropped during merging.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedSpan {
    pub span: MentionSpan,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeOutcome {
    pub spans: Vec<MentionSpan>,
    pub rejected: Vec<RejectedSpan>,
}

fn check_span(span: &MentionSpan, message: &Message, chars: &[char], catalog: &PrincipleCatalog) -> Result<(), String> {
    if span.message_id != message.id {
        return Err(format!("span belongs to message {:?}", span.message_id));
    }
    if span.start >= span.end || span.end > chars.len() {
        return Err(format!(
            "span {}..{} is outside message bounds 0..{}",
            span.start,
            span.end,
            chars.len()
        ));
    }
    if !catalog.contains(&span.principle_id) {
        return Err(format!("unknown principle {:?}", span.principle_id));
    }
    let covered: Vec<char> = chars[span.start..span.end].iter().copied().map(fold_char).collect();
    if covered != fold_term(&span.matched_term) {
        return Err(format!("matched term {:?} does not match the message text", span.matched_term));
    }
    Ok(())
}

/// Unions analyzer outputs into one non-overlapping, start-sorted list.
///
/// Conflicts are resolved by source (lexicon before llm), then leftmost,
/// then longest, then catalog order. Spans that fail validation are
/// reported in `rejected`; the rest are kept.
pub fn merge_results(message: &Message, catalog: &PrincipleCatalog, results: &[AnalyzerResult]) -> MergeOutcome {
    let chars: Vec<char> = message.text.chars().collect();
    let mut outcome = MergeOutcome::default();
    let mut candidates = Vec::new();
    for result in results {
        for span in &result.spans {
            match check_span(span, message, &chars, catalog) {
                Ok(()) => candidates.push((result.source, span)),
                Err(reason) => outcome.rejected.push(RejectedSpan {
                    span: span.clone(),
                    reason,
                }),
            }
        }
    }
    candidates.sort_by_key(|(source, span)| {
        (
            *source,
            span.start,
            Reverse(span.len()),
            catalog.rank(&span.principle_id).unwrap_or(usize::MAX),
        )
    });
    for (_, span) in candidates {
        if !outcome.spans.iter().any(|kept| kept.overlaps(span)) {
            outcome.spans.push(span.clone());
        }
    }
    outcome.spans.sort_by_key(|s| s.start);
    outcome
}

/// The analyzers run for every message. The lexicon analyzer is always
/// present.
pub struct AnalyzerSet {
    lexicon: LexiconAnalyzer,
    extra: Vec<Box<dyn Analyzer>>,
}

impl AnalyzerSet {
    pub fn lexicon_only(catalog: &PrincipleCatalog) -> Self {
        Self {
            lexicon: LexiconAnalyzer::new(catalog),
            extra: Vec::new(),
        }
    }

    pub fn with(mut self, analyzer: Box<dyn Analyzer>) -> Self {
        self.extra.push(analyzer);
        self
    }

    pub fn lexicon(&self) -> &Lexicon {
        self.lexicon.lexicon()
    }

    fn iter(&self) -> impl Iterator<Item = &dyn Analyzer> {
        std::iter::once(&self.lexicon as &dyn Analyzer).chain(self.extra.iter().map(|a| a.as_ref()))
    }
}

/// Merged detection output plus diagnostics for the frame metadata.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Analysis {
    pub spans: Vec<MentionSpan>,
    pub warnings: Vec<String>,
    pub rejected: Vec<RejectedSpan>,
}

/// Runs every analyzer and merges their results. A failing analyzer is
/// skipped with a warning; the message itself never fails.
pub fn analyze_message(message: &Message, catalog: &PrincipleCatalog, analyzers: &AnalyzerSet) -> Analysis {
    let mut results = Vec::new();
    let mut warnings = Vec::new();
    for analyzer in analyzers.iter() {
        match analyzer.analyze(message, catalog) {
            Ok(result) => results.push(result),
            Err(err) => {
                tracing::warn!(analyzer = analyzer.name(), error = %err, "analyzer failed");
                warnings.push(format!("analyzer {} failed: {err}", analyzer.name()));
            }
        }
    }
    let merged = merge_results(message, catalog, &results);
    for rejected in &merged.rejected {
        warnings.push(format!("rejected span: {}", rejected.reason));
    }
    Analysis {
        spans: merged.spans,
        warnings,
        rejected: merged.rejected,
    }
}
