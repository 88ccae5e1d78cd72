//! Conversation primitives shared by every layer.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "user" => Ok(Role::User),
            "assistant" => Ok(Role::Assistant),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

/// One chat turn. Immutable once appended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub id: String,
    pub index: usize,
    pub role: Role,
    pub text: String,
    pub created_at: DateTime<Utc>,
}

impl Message {
    /// Session-scoped identifier for the message at `index`.
    pub fn id_for_index(index: usize) -> String {
        format!("m{index}")
    }

    /// Text length in Unicode code points; span offsets are measured in these.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// Media types accepted for an uploaded design.
pub const ACCEPTED_MEDIA_TYPES: &[&str] = &["image/png", "image/jpeg", "image/gif", "image/webp"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unsupported artifact media type {0:?}")]
pub struct MediaTypeError(pub String);

/// The design under discussion. Only metadata lives in session state; the
/// bytes sit in storage under `content_ref`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignArtifact {
    pub name: String,
    pub media_type: String,
    pub content_ref: String,
}

impl DesignArtifact {
    pub fn new(name: &str, media_type: &str, content_ref: &str) -> Result<Self, MediaTypeError> {
        if !ACCEPTED_MEDIA_TYPES.contains(&media_type) {
            return Err(MediaTypeError(media_type.to_string()));
        }
        Ok(Self {
            name: name.to_string(),
            media_type: media_type.to_string(),
            content_ref: content_ref.to_string(),
        })
    }
}

/// Highlight visibility per principle. Principles without an entry are
/// visible.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToggleSet(BTreeMap<String, bool>);

impl ToggleSet {
    pub fn is_enabled(&self, principle_id: &str) -> bool {
        self.0.get(principle_id).copied().unwrap_or(true)
    }

    pub fn set(&mut self, principle_id: &str, enabled: bool) {
        self.0.insert(principle_id.to_string(), enabled);
    }

    /// Registers a newly discussed principle with the default (enabled)
    /// state, leaving an explicit choice untouched.
    pub fn register(&mut self, principle_id: &str) {
        self.0.entry(principle_id.to_string()).or_insert(true);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, bool)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn artifact_media_type_is_checked() {
        assert!(DesignArtifact::new("home.png", "image/png", "sha256:00").is_ok());
        assert_eq!(
            DesignArtifact::new("home.pdf", "application/pdf", "x").unwrap_err(),
            MediaTypeError("application/pdf".into())
        );
    }

    #[test]
    fn toggles_default_to_enabled_and_keep_explicit_choices() {
        let mut toggles = ToggleSet::default();
        assert!(toggles.is_enabled("balance"));
        toggles.set("balance", false);
        toggles.register("balance");
        assert!(!toggles.is_enabled("balance"));
        toggles.register("contrast");
        assert!(toggles.is_enabled("contrast"));
        assert_eq!(toggles.len(), 2);
    }

    #[test]
    fn role_round_trips_through_str() {
        for role in [Role::User, Role::Assistant] {
            assert_eq!(role.as_str().parse::<Role>().unwrap(), role);
        }
        assert!("system".parse::<Role>().is_err());
    }
}
