//! Candidate generation by exact agreement on derived keys.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::record::{Dataset, PersonRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockField {
    Forename,
    Surname,
    BirthYear,
    Gender,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum KeyPart {
    Field { field: BlockField },
    Prefix { field: BlockField, len: usize },
}

impl KeyPart {
    fn value(&self, r: &PersonRecord) -> Option<String> {
        let (field, len) = match *self {
            KeyPart::Field { field } => (field, None),
            KeyPart::Prefix { field, len } => (field, Some(len)),
        };
        let raw = match field {
            BlockField::Forename => r.forename.clone(),
            BlockField::Surname => r.surname.clone(),
            BlockField::BirthYear => r.birth_year?.to_string(),
            BlockField::Gender => r.gender.clone(),
        };
        if raw.is_empty() {
            return None;
        }
        // a name shorter than the prefix contributes the whole name
        Some(match len {
            Some(k) => raw.chars().take(k).collect(),
            None => raw,
        })
    }
}

/// Records pair when every key part agrees exactly. A blank component keeps
/// the record out of this rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockingRule {
    pub name: String,
    pub parts: Vec<KeyPart>,
}

impl BlockingRule {
    pub fn key(&self, r: &PersonRecord) -> Option<String> {
        let mut key = String::new();
        for p in &self.parts {
            key.push_str(&p.value(r)?);
            key.push('\u{1f}');
        }
        Some(key)
    }

    pub fn matches(&self, a: &PersonRecord, b: &PersonRecord) -> bool {
        matches!((self.key(a), self.key(b)), (Some(x), Some(y)) if x == y)
    }
}

/// Year + gender + surname + first three forename letters, and year + gender
/// + first three forename letters.
pub fn default_rules() -> Vec<BlockingRule> {
    let year = KeyPart::Field { field: BlockField::BirthYear };
    let gender = KeyPart::Field { field: BlockField::Gender };
    let fn3 = KeyPart::Prefix { field: BlockField::Forename, len: 3 };
    vec![
        BlockingRule {
            name: "year_gender_surname_fn3".into(),
            parts: vec![year, gender, KeyPart::Field { field: BlockField::Surname }, fn3],
        },
        BlockingRule { name: "year_gender_fn3".into(), parts: vec![year, gender, fn3] },
    ]
}

/// Candidate right-hand indices for each left record: the union of every
/// rule's equijoin, sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Candidates {
    pub per_left: Vec<Vec<u32>>,
}

impl Candidates {
    pub fn n_pairs(&self) -> usize {
        self.per_left.iter().map(Vec::len).sum()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.per_left.iter().enumerate().flat_map(|(i, v)| v.iter().map(move |&j| (i, j as usize)))
    }
}

pub fn block(left: &[PersonRecord], right: &Dataset, rules: &[BlockingRule]) -> Candidates {
    let indexes: Vec<HashMap<String, Vec<u32>>> = rules
        .iter()
        .map(|rule| {
            let mut idx: HashMap<String, Vec<u32>> = HashMap::new();
            for (j, r) in right.iter().enumerate() {
                if let Some(k) = rule.key(r) {
                    idx.entry(k).or_default().push(j as u32);
                }
            }
            idx
        })
        .collect();
    let per_left = left
        .par_iter()
        .map(|l| {
            let mut out: Vec<u32> = Vec::new();
            for (rule, idx) in rules.iter().zip(&indexes) {
                if let Some(hits) = rule.key(l).and_then(|k| idx.get(&k)) {
                    out.extend_from_slice(hits);
                }
            }
            out.sort_unstable();
            out.dedup();
            out
        })
        .collect();
    Candidates { per_left }
}
