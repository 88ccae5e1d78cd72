//! Deterministic offline stand-in for the model. Every output is a pure
//! function of the request.

use std::collections::BTreeMap;

use crate::catalog::PrincipleCatalog;
use crate::detection::Lexicon;
use crate::scaffold::{KeyTerm, Materials};

use super::{CompletionRequest, TemplateId};

const STUB_REPLIES_JSON: &str = include_str!("../../assets/stub_replies.json");
const FALLBACK_KEY: &str = "fallback";

/// Canned cue templates; `{name}` is the principle display name.
pub fn stub_cues(name: &str) -> Vec<String> {
    vec![
        format!("Can you show an example applying {name}?"),
        format!("Why does {name} matter for my design?"),
        format!("How do I make this {name} feedback actionable?"),
    ]
}

/// Materials built from the request variables alone: the catalog
/// definition, a mention summary and the catalog glossary.
pub fn stub_materials(variables: &BTreeMap<String, String>) -> Materials {
    let principle = variables.get("principle").map(String::as_str).unwrap_or("This principle");
    let definition = variables
        .get("definition")
        .filter(|d| !d.trim().is_empty())
        .cloned()
        .unwrap_or_else(|| format!("{principle} is a visual design principle."));
    let relation_to_design = match (variables.get("mention_count"), variables.get("first_message")) {
        (Some(count), Some(first)) => format!("Mentioned {count} time(s), first in message {first}."),
        _ => format!(
            "{principle} has come up in feedback on {}.",
            variables.get("design").map(String::as_str).unwrap_or("your design")
        ),
    };
    let key_terms = variables
        .get("key_terms")
        .and_then(|raw| serde_json::from_str::<Vec<KeyTerm>>(raw).ok())
        .filter(|terms| !terms.is_empty())
        .unwrap_or_else(|| {
            vec![KeyTerm {
                term: principle.to_lowercase(),
                gloss: format!("A key term related to {principle}."),
            }]
        });
    Materials {
        definition,
        relation_to_design,
        key_terms,
        degraded: false,
    }
}

#[derive(Debug, Clone)]
pub struct StubBackend {
    lexicon: Lexicon,
    replies: BTreeMap<String, String>,
}

impl Default for StubBackend {
    fn default() -> Self {
        Self::new(&PrincipleCatalog::default_catalog())
    }
}

impl StubBackend {
    /// Stub whose canned replies are keyed by the principles of `catalog`.
    pub fn new(catalog: &PrincipleCatalog) -> Self {
        let replies: BTreeMap<String, String> =
            serde_json::from_str(STUB_REPLIES_JSON).expect("shipped stub replies are valid JSON");
        Self {
            lexicon: Lexicon::from_catalog(catalog),
            replies,
        }
    }

    /// Canned critique for the first principle term found in `user_text`,
    /// or the generic fallback.
    pub fn reply_for(&self, user_text: &str) -> &str {
        self.lexicon
            .find_all(user_text)
            .first()
            .and_then(|(_, _, principle_id, _)| self.replies.get(*principle_id))
            .or_else(|| self.replies.get(FALLBACK_KEY))
            .map(String::as_str)
            .unwrap_or_default()
    }

    pub fn respond(&self, request: &CompletionRequest) -> String {
        let vars = &request.variables;
        match request.template_id {
            TemplateId::AssistantReply => {
                self.reply_for(vars.get("user_text").map(String::as_str).unwrap_or_default())
                    .to_string()
            }
            TemplateId::Materials => {
                serde_json::to_string(&stub_materials(vars)).expect("materials serialize")
            }
            TemplateId::Cues => {
                let name = vars.get("principle").map(String::as_str).unwrap_or("this principle");
                serde_json::to_string(&stub_cues(name)).expect("cues serialize")
            }
            TemplateId::Detect => "[]".to_string(),
        }
    }
}
