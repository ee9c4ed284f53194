//! Demographic attribute domains and survey questions.
//!
//! A configuration document (TOML) lists the attributes in chain order and the
//! questions with their response scales:
//!
//! ```toml
//! [[attributes]]
//! name = "Age Group"
//! categories = ["14--17", "18--29"]
//!
//! [[questions]]
//! id = "walking"
//! text = "I like to walk."
//! responses = ["Completely Agree", "Rather Agree"]   # optional, defaults to the agreement scale
//! group_attribute = "Age Group"                     # optional, defaults to "Age Group"
//! trend = 1.2                                       # optional, deterministic backend only
//! ```
//!
//! Labels are matched exactly and case-sensitively everywhere.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SCHEMA_TOML: &str = include_str!("../data/default_schema.toml");

pub const DEFAULT_GROUP_ATTRIBUTE: &str = "Age Group";

pub const AGREEMENT_SCALE: [&str; 5] = [
    "Completely Agree",
    "Rather Agree",
    "Partly Agree",
    "Rather Disagree",
    "Completely Disagree",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub categories: Vec<String>,
}

impl Attribute {
    pub fn new(name: impl Into<String>, categories: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Attribute {
            name: name.into(),
            categories: categories.into_iter().map(Into::into).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }
}

/// Ordered attribute list. Immutable once validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Attribute>", into = "Vec<Attribute>")]
pub struct AttributeSchema {
    attributes: Vec<Attribute>,
}

impl AttributeSchema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        let mut names = HashSet::new();
        for attr in &attributes {
            if attr.name.is_empty() {
                return Err(Error::Schema("attribute with empty name".into()));
            }
            if !names.insert(attr.name.as_str()) {
                return Err(Error::Schema(format!("duplicate attribute name {:?}", attr.name)));
            }
            if attr.categories.is_empty() {
                return Err(Error::Schema(format!("attribute {:?} has no categories", attr.name)));
            }
            let mut seen = HashSet::new();
            for c in &attr.categories {
                if !seen.insert(c.as_str()) {
                    return Err(Error::Schema(format!(
                        "duplicate category {:?} in attribute {:?}",
                        c, attr.name
                    )));
                }
            }
        }
        if attributes.is_empty() {
            return Err(Error::Schema("schema has no attributes".into()));
        }
        Ok(AttributeSchema { attributes })
    }

    /// Schema with generated labels, mostly for tests: attribute `A{k}` with categories `c{j}`.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let attrs = sizes
            .iter()
            .enumerate()
            .map(|(k, &n)| Attribute::new(format!("A{k}"), (0..n).map(|j| format!("c{j}"))))
            .collect();
        Self::new(attrs)
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.attributes.iter().map(Attribute::len).collect()
    }

    pub fn attribute(&self, name: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn require_index(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::Schema(format!("unknown attribute {name:?}")))
    }
}

impl TryFrom<Vec<Attribute>> for AttributeSchema {
    type Error = Error;

    fn try_from(value: Vec<Attribute>) -> Result<Self> {
        AttributeSchema::new(value)
    }
}

impl From<AttributeSchema> for Vec<Attribute> {
    fn from(value: AttributeSchema) -> Self {
        value.attributes
    }
}

/// Number of distinct personas: the product of category counts.
pub fn persona_space_size(schema: &AttributeSchema) -> usize {
    schema.attributes.iter().map(Attribute::len).product()
}

fn default_scale() -> Vec<String> {
    AGREEMENT_SCALE.iter().map(|s| s.to_string()).collect()
}

fn default_group_attribute() -> String {
    DEFAULT_GROUP_ATTRIBUTE.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    #[serde(default)]
    pub text: String,
    #[serde(default = "default_scale")]
    pub responses: Vec<String>,
    #[serde(default = "default_group_attribute")]
    pub group_attribute: String,
    /// Strength of the monotone trend along `group_attribute` used by the
    /// deterministic backend. Zero disables it.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub trend: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl Question {
    pub fn new(id: impl Into<String>, text: impl Into<String>, responses: &[&str]) -> Self {
        Question {
            id: id.into(),
            text: text.into(),
            responses: responses.iter().map(|s| s.to_string()).collect(),
            group_attribute: default_group_attribute(),
            trend: 0.0,
        }
    }

    pub fn with_group(mut self, attribute: impl Into<String>) -> Self {
        self.group_attribute = attribute.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Schema("question with empty id".into()));
        }
        if self.responses.len() < 2 {
            return Err(Error::Schema(format!(
                "question {:?} needs at least 2 response options",
                self.id
            )));
        }
        let mut seen = HashSet::new();
        for r in &self.responses {
            if !seen.insert(r.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate response {:?} in question {:?}",
                    r, self.id
                )));
            }
        }
        if !self.trend.is_finite() {
            return Err(Error::Schema(format!("question {:?} has non-finite trend", self.id)));
        }
        Ok(())
    }

    pub fn response_index(&self, label: &str) -> Option<usize> {
        self.responses.iter().position(|r| r == label)
    }
}

/// A schema together with the questions asked over it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyConfig {
    pub attributes: AttributeSchema,
    #[serde(default)]
    pub questions: Vec<Question>,
}

impl SurveyConfig {
    pub fn schema(&self) -> &AttributeSchema {
        &self.attributes
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for q in &self.questions {
            q.validate()?;
            if !ids.insert(q.id.as_str()) {
                return Err(Error::Schema(format!("duplicate question id {:?}", q.id)));
            }
            if self.attributes.index_of(&q.group_attribute).is_none() {
                return Err(Error::Schema(format!(
                    "question {:?} groups by unknown attribute {:?}",
                    q.id, q.group_attribute
                )));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("survey config always serializes")
    }

    pub fn default_config() -> Self {
        load_config(DEFAULT_SCHEMA_TOML).expect("bundled schema is valid")
    }
}

/// Parses and validates a full configuration document.
pub fn load_config(text: &str) -> Result<SurveyConfig> {
    let cfg: SurveyConfig =
        toml::from_str(text).map_err(|e| Error::Schema(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parses a configuration document and returns its attribute schema.
pub fn load_schema(text: &str) -> Result<AttributeSchema> {
    load_config(text).map(|c| c.attributes)
}
