//! Declarative description of a tabular dataset.
//!
//! Schemas are stored as TOML:
//!
//! ```toml
//! label_column = "income"
//! positive_label = ">50K"
//!
//! [[columns]]
//! name = "age"
//! kind = "numeric"
//!
//! [[sensitive_columns]]
//! name = "sex"
//! mask_reference = "Male"
//! protected = ["Female"]
//! ```
//!
//! Each sensitive column is encoded as one binary feature, `1` for the
//! protected group. The protected group is either a list of levels or, for
//! numeric columns, every value at or below `protected_at_or_below`.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitiveColumn {
    pub name: String,
    /// Raw value every row is set to at prediction time.
    pub mask_reference: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub protected: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protected_at_or_below: Option<f64>,
}

impl SensitiveColumn {
    /// Binary encoding of a raw value: 1 for the protected group.
    pub fn encode(&self, raw: &str) -> Result<f64> {
        let raw = raw.trim();
        if let Some(cut) = self.protected_at_or_below {
            let v: f64 = raw.parse().map_err(|_| Error::ParseNumeric {
                column: self.name.clone(),
                row: 0,
                value: raw.to_string(),
            })?;
            return Ok(if v <= cut { 1.0 } else { 0.0 });
        }
        if self.protected.is_empty() {
            return match raw {
                "1" => Ok(1.0),
                "0" => Ok(0.0),
                other => Err(Error::UnseenLevel {
                    column: self.name.clone(),
                    level: other.to_string(),
                }),
            };
        }
        Ok(if self.protected.iter().any(|p| p == raw) {
            1.0
        } else {
            0.0
        })
    }

    pub fn mask_value(&self) -> Result<f64> {
        self.encode(&self.mask_reference)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub columns: Vec<ColumnSpec>,
    pub label_column: String,
    pub positive_label: String,
    pub sensitive_columns: Vec<SensitiveColumn>,
}

impl DatasetSchema {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: DatasetSchema = toml::from_str(text).map_err(|e| Error::Format {
            what: "schema",
            detail: e.to_string(),
        })?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let count = |name: &str| self.columns.iter().filter(|c| c.name == name).count();
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("column `{}` declared twice", c.name)));
            }
        }
        if count(&self.label_column) != 1 {
            return Err(Error::Schema(format!(
                "label column `{}` must appear exactly once in columns",
                self.label_column
            )));
        }
        if self.sensitive_columns.is_empty() {
            return Err(Error::Schema("at least one sensitive column is required".into()));
        }
        let mut sens_seen = HashSet::new();
        for s in &self.sensitive_columns {
            if count(&s.name) != 1 {
                return Err(Error::Schema(format!(
                    "sensitive column `{}` must appear exactly once in columns",
                    s.name
                )));
            }
            if s.name == self.label_column {
                return Err(Error::Schema(format!("`{}` is both label and sensitive", s.name)));
            }
            if !sens_seen.insert(s.name.as_str()) {
                return Err(Error::Schema(format!("sensitive column `{}` listed twice", s.name)));
            }
            if s.protected_at_or_below.is_some() && !s.protected.is_empty() {
                return Err(Error::Schema(format!(
                    "sensitive column `{}`: give either `protected` or `protected_at_or_below`",
                    s.name
                )));
            }
            s.mask_value().map_err(|e| {
                Error::Schema(format!(
                    "mask reference `{}` of `{}` is not a value the column can take: {e}",
                    s.mask_reference, s.name
                ))
            })?;
        }
        Ok(())
    }

    pub fn kind_of(&self, name: &str) -> Option<ColumnKind> {
        self.columns.iter().find(|c| c.name == name).map(|c| c.kind)
    }

    pub fn sensitive(&self, name: &str) -> Option<&SensitiveColumn> {
        self.sensitive_columns.iter().find(|s| s.name == name)
    }

    /// Feature columns in schema order (label excluded).
    pub fn feature_columns(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns.iter().filter(move |c| c.name != self.label_column)
    }
}
