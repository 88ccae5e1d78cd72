//! Design-principle catalogs.
//!
//! A catalog is the ordered list of principles a session is organized
//! around. The same JSON file doubles as the lexicon source: every
//! principle carries the key terms that the detector looks for.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::fold_term;

const DEFAULT_CATALOG_JSON: &str = include_str!("../assets/default_catalog.json");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CatalogError {
    #[error("catalog parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("catalog has no principles")]
    Empty,
    #[error("principle id {0:?} is not a lowercase hyphenated slug")]
    InvalidId(String),
    #[error("duplicate principle id {0:?}")]
    DuplicateId(String),
    #[error("principle {0:?} has no key terms")]
    NoTerms(String),
    #[error("principle {0:?} has a blank key term")]
    BlankTerm(String),
    #[error("key term {term:?} is claimed by both {first:?} and {second:?}")]
    TermConflict {
        term: String,
        first: String,
        second: String,
    },
}

/// One named visual-design guideline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principle {
    pub id: String,
    pub name: String,
    pub definition: String,
    pub terms: Vec<String>,
    /// Optional one-sentence explanations keyed by term.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub glosses: BTreeMap<String, String>,
}

impl Principle {
    pub fn new(id: &str, name: &str, definition: &str, terms: &[&str]) -> Self {
        Self {
            id: id.to_string(),
            name: name.to_string(),
            definition: definition.to_string(),
            terms: terms.iter().map(|t| t.to_string()).collect(),
            glosses: BTreeMap::new(),
        }
    }

    /// The catalog gloss for `term`, or a generic line naming the principle.
    pub fn gloss(&self, term: &str) -> String {
        self.glosses
            .get(term)
            .cloned()
            .unwrap_or_else(|| format!("A key term related to {}.", self.name))
    }

    /// Terms with surrounding whitespace removed and inner runs collapsed
    /// to single spaces.
    pub fn normalized_terms(&self) -> impl Iterator<Item = String> + '_ {
        self.terms.iter().map(|t| normalize_term(t))
    }
}

pub(crate) fn normalize_term(term: &str) -> String {
    term.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn is_slug(id: &str) -> bool {
    !id.is_empty()
        && id
            .split('-')
            .all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrincipleCatalog {
    pub version: String,
    pub principles: Vec<Principle>,
}

impl PrincipleCatalog {
    /// Builds a catalog and validates it.
    pub fn new(version: &str, principles: Vec<Principle>) -> Result<Self, CatalogError> {
        let catalog = Self {
            version: version.to_string(),
            principles,
        };
        catalog.validate()?;
        Ok(catalog)
    }

    /// The shipped five-principle catalog.
    pub fn default_catalog() -> Self {
        Self::from_json(DEFAULT_CATALOG_JSON).expect("shipped catalog is valid")
    }

    pub fn from_json(json: &str) -> Result<Self, CatalogError> {
        let catalog: Self = serde_json::from_str(json).map_err(|e| CatalogError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        if self.principles.is_empty() {
            return Err(CatalogError::Empty);
        }
        let mut seen_ids = HashMap::new();
        let mut owners: HashMap<String, &str> = HashMap::new();
        for principle in &self.principles {
            if !is_slug(&principle.id) {
                return Err(CatalogError::InvalidId(principle.id.clone()));
            }
            if seen_ids.insert(principle.id.as_str(), ()).is_some() {
                return Err(CatalogError::DuplicateId(principle.id.clone()));
            }
            if principle.terms.is_empty() {
                return Err(CatalogError::NoTerms(principle.id.clone()));
            }
            for term in principle.normalized_terms() {
                if term.is_empty() {
                    return Err(CatalogError::BlankTerm(principle.id.clone()));
                }
                let folded: String = fold_term(&term).into_iter().collect();
                match owners.get(&folded) {
                    Some(owner) if *owner != principle.id => {
                        return Err(CatalogError::TermConflict {
                            term,
                            first: owner.to_string(),
                            second: principle.id.clone(),
                        });
                    }
                    _ => {
                        owners.insert(folded, &principle.id);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Principle> {
        self.principles.iter().find(|p| p.id == id)
    }

    /// Position of a principle in catalog order.
    pub fn rank(&self, id: &str) -> Option<usize> {
        self.principles.iter().position(|p| p.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.rank(id).is_some()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.principles.iter().map(|p| p.id.as_str())
    }

    pub fn len(&self) -> usize {
        self.principles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.principles.is_empty()
    }
}
