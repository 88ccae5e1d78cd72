//! Prompt templates.
//!
//! Templates live as text files under `templates/` and are compiled in.
//! `{name}` is a required placeholder and `{name?}` an optional one that
//! renders empty when unbound. Braces around anything that is not a bare
//! lowercase identifier are copied through untouched, so templates can
//! show JSON examples.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    AssistantReply,
    Materials,
    Cues,
    Detect,
}

impl TemplateId {
    pub const ALL: [TemplateId; 4] = [
        TemplateId::AssistantReply,
        TemplateId::Materials,
        TemplateId::Cues,
        TemplateId::Detect,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::AssistantReply => "assistant_reply",
            TemplateId::Materials => "materials",
            TemplateId::Cues => "cues",
            TemplateId::Detect => "detect",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            TemplateId::AssistantReply => include_str!("../../templates/assistant_reply.txt"),
            TemplateId::Materials => include_str!("../../templates/materials.txt"),
            TemplateId::Cues => include_str!("../../templates/cues.txt"),
            TemplateId::Detect => include_str!("../../templates/detect.txt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| TemplateError::UnknownTemplate(s.to_string()))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template {template} has no value for placeholder {{{placeholder}}}")]
    MissingVariable { template: TemplateId, placeholder: String },
}

enum Piece<'a> {
    Text(&'a str),
    Slot { name: &'a str, optional: bool },
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c == '_')
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn parse(source: &str) -> Vec<Piece<'_>> {
    let mut pieces = Vec::new();
    let mut rest = source;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let slot = after.find('}').and_then(|close| {
            let inner = &after[..close];
            let (name, optional) = match inner.strip_suffix('?') {
                Some(name) => (name, true),
                None => (inner, false),
            };
            is_ident(name).then_some((name, optional, close))
        });
        match slot {
            Some((name, optional, close)) => {
                pieces.push(Piece::Text(&rest[..open]));
                pieces.push(Piece::Slot { name, optional });
                rest = &after[close + 1..];
            }
            None => {
                pieces.push(Piece::Text(&rest[..=open]));
                rest = after;
            }
        }
    }
    pieces.push(Piece::Text(rest));
    pieces
}

/// Required placeholder names of a template, in order of appearance.
pub fn placeholders(template: TemplateId) -> Vec<&'static str> {
    parse(template.source())
        .into_iter()
        .filter_map(|p| match p {
            Piece::Slot { name, optional: false } => Some(name),
            _ => None,
        })
        .collect()
}

/// Substitutes variables into a template.
pub fn render_prompt(template: TemplateId, variables: &BTreeMap<String, String>) -> Result<String, TemplateError> {
    let mut out = String::new();
    for piece in parse(template.source()) {
        match piece {
            Piece::Text(text) => out.push_str(text),
            Piece::Slot { name, optional } => match variables.get(name) {
                Some(value) => out.push_str(value),
                None if optional => {}
                None => {
                    return Err(TemplateError::MissingVariable {
                        template,
                        placeholder: name.to_string(),
                    })
                }
            },
        }
    }
    Ok(out)
}
