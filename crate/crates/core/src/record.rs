//! Registry rows and the in-memory dataset they live in.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stable person identifier carried unchanged through corruption.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecordId(pub String);

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RecordId {
    fn from(s: &str) -> Self {
        RecordId(s.to_string())
    }
}

impl From<u64> for RecordId {
    fn from(v: u64) -> Self {
        RecordId(v.to_string())
    }
}

/// The two corruptible identifier fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NameField {
    Forename,
    Surname,
}

impl NameField {
    pub const ALL: [NameField; 2] = [NameField::Forename, NameField::Surname];

    pub fn as_str(self) -> &'static str {
        match self {
            NameField::Forename => "forename",
            NameField::Surname => "surname",
        }
    }
}

impl fmt::Display for NameField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonRecord {
    pub id: RecordId,
    pub forename: String,
    pub surname: String,
    pub birth_year: Option<i32>,
    pub gender: String,
    pub group: String,
}

impl PersonRecord {
    pub fn name(&self, field: NameField) -> &str {
        match field {
            NameField::Forename => &self.forename,
            NameField::Surname => &self.surname,
        }
    }

    pub fn name_mut(&mut self, field: NameField) -> &mut String {
        match field {
            NameField::Forename => &mut self.forename,
            NameField::Surname => &mut self.surname,
        }
    }

    /// Blank names cannot be corrupted and are excluded from exposure budgets.
    pub fn is_corruptible(&self, field: NameField) -> bool {
        !self.name(field).is_empty()
    }
}

/// An ordered collection of records with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    records: Vec<PersonRecord>,
}

impl Dataset {
    pub fn new(records: Vec<PersonRecord>) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(&r.id) {
                return Err(Error::DuplicateId(r.id.0.clone()));
            }
        }
        Ok(Dataset { records })
    }

    pub fn records(&self) -> &[PersonRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PersonRecord> {
        self.records.iter()
    }

    pub fn get(&self, idx: usize) -> &PersonRecord {
        &self.records[idx]
    }

    pub fn into_records(self) -> Vec<PersonRecord> {
        self.records
    }

    /// Map from id to position.
    pub fn index_by_id(&self) -> HashMap<&RecordId, usize> {
        self.records.iter().enumerate().map(|(i, r)| (&r.id, i)).collect()
    }

    /// Distinct group labels in sorted order.
    pub fn groups(&self) -> Vec<String> {
        let set: std::collections::BTreeSet<&str> = self.records.iter().map(|r| r.group.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }
}
