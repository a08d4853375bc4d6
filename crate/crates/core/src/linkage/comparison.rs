//! Comparison levels for each model family.

use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::name_features::{
    discretise, extract_features, pc_distance, project, CorpusStats, EmbeddingDocument, Projection,
};
use crate::record::{NameField, PersonRecord};
use crate::string_metrics;

/// Up to eight per-component forename columns plus the surname.
pub const MAX_COLUMNS: usize = 9;
pub const MISSING: u8 = u8::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Jw,
    JwNoTf,
    Levenshtein,
    LevenshteinNoTf,
    Combined,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 5] = [
        ModelFamily::Jw,
        ModelFamily::JwNoTf,
        ModelFamily::Levenshtein,
        ModelFamily::LevenshteinNoTf,
        ModelFamily::Combined,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Jw => "jw",
            ModelFamily::JwNoTf => "jw_no_tf",
            ModelFamily::Levenshtein => "levenshtein",
            ModelFamily::LevenshteinNoTf => "levenshtein_no_tf",
            ModelFamily::Combined => "combined",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ModelFamily::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}")))
    }

    pub fn needs_embedding(self) -> bool {
        self == ModelFamily::Combined
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Comparator {
    /// Similarity bands, highest first; a pair lands in the first band it reaches.
    JaroWinkler { bands: Vec<f64> },
    /// Distance bands, smallest first.
    Levenshtein { bands: Vec<usize> },
    /// Aggregate embedding distance discretised into levels 4..0.
    PcCluster,
    /// One principal component's absolute difference, levels 4..0.
    PcComponent { component: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub field: NameField,
    pub comparator: Comparator,
    /// Level 0 is exact agreement.
    pub exact_level: bool,
    /// Exact agreement weighted by the value's prevalence.
    pub tf: bool,
}

impl ColumnSpec {
    pub fn n_levels(&self) -> usize {
        let inner = match &self.comparator {
            Comparator::JaroWinkler { bands } => bands.len() + 1,
            Comparator::Levenshtein { bands } => bands.len() + 1,
            Comparator::PcCluster | Comparator::PcComponent { .. } => 5,
        };
        inner + usize::from(self.exact_level)
    }

    pub fn level_labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.exact_level {
            out.push("exact".to_string());
        }
        match &self.comparator {
            Comparator::JaroWinkler { bands } => out.extend(bands.iter().map(|b| format!("jw>={b}"))),
            Comparator::Levenshtein { bands } => out.extend(bands.iter().map(|b| format!("lev<={b}"))),
            Comparator::PcCluster | Comparator::PcComponent { .. } => {
                out.extend((1..=4).rev().map(|l| format!("pc_level_{l}")));
                out.push("pc_level_0".to_string());
                return out;
            }
        }
        out.push("else".to_string());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelConfig {
    pub jw_bands: Vec<f64>,
    pub lev_bands: Vec<usize>,
    /// Eight per-component forename columns instead of one aggregate.
    pub per_component: bool,
}

impl Default for LevelConfig {
    fn default() -> Self {
        LevelConfig { jw_bands: vec![0.92, 0.88, 0.70], lev_bands: vec![1, 2], per_component: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSpec {
    pub columns: Vec<ColumnSpec>,
}

impl ComparisonSpec {
    pub fn for_family(family: ModelFamily, cfg: &LevelConfig) -> Self {
        let string_col = |field, tf, jw: bool| ColumnSpec {
            field,
            comparator: if jw {
                Comparator::JaroWinkler { bands: cfg.jw_bands.clone() }
            } else {
                Comparator::Levenshtein { bands: cfg.lev_bands.clone() }
            },
            exact_level: true,
            tf,
        };
        let both = |tf, jw| ComparisonSpec {
            columns: vec![string_col(NameField::Forename, tf, jw), string_col(NameField::Surname, tf, jw)],
        };
        match family {
            ModelFamily::Jw => both(true, true),
            ModelFamily::JwNoTf => both(false, true),
            ModelFamily::Levenshtein => both(true, false),
            ModelFamily::LevenshteinNoTf => both(false, false),
            ModelFamily::Combined => {
                let pc =
                    |comparator| ColumnSpec { field: NameField::Forename, comparator, exact_level: false, tf: false };
                let mut columns: Vec<ColumnSpec> = if cfg.per_component {
                    (0..crate::name_features::N_COMPONENTS)
                        .map(|component| pc(Comparator::PcComponent { component }))
                        .collect()
                } else {
                    vec![pc(Comparator::PcCluster)]
                };
                columns.push(string_col(NameField::Surname, true, true));
                ComparisonSpec { columns }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() || self.columns.len() > MAX_COLUMNS {
            return Err(Error::Config(format!("comparison needs 1..={MAX_COLUMNS} columns")));
        }
        for c in &self.columns {
            match &c.comparator {
                Comparator::JaroWinkler { bands } => {
                    if bands.windows(2).any(|w| w[0] <= w[1]) || bands.iter().any(|b| !(0.0..=1.0).contains(b)) {
                        return Err(Error::Config(format!("jaro-winkler bands must decrease within [0,1]: {bands:?}")));
                    }
                }
                Comparator::Levenshtein { bands }
                    if (bands.windows(2).any(|w| w[0] >= w[1]) || bands.first() == Some(&0)) =>
                {
                    return Err(Error::Config(format!("levenshtein bands must increase from 1: {bands:?}")));
                }
                _ => {}
            }
            if c.tf && !c.exact_level {
                return Err(Error::Config("term-frequency adjustment needs an exact level".into()));
            }
        }
        Ok(())
    }

    pub fn needs_embedding(&self) -> bool {
        self.columns.iter().any(|c| matches!(c.comparator, Comparator::PcCluster | Comparator::PcComponent { .. }))
    }
}

/// Level index per column (0 = strongest agreement), or [`MISSING`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ComparisonVector {
    levels: [u8; MAX_COLUMNS],
    len: u8,
}

impl ComparisonVector {
    pub fn new(levels: &[Option<u8>]) -> Self {
        assert!(levels.len() <= MAX_COLUMNS);
        let mut v = ComparisonVector { levels: [MISSING; MAX_COLUMNS], len: levels.len() as u8 };
        for (slot, l) in v.levels.iter_mut().zip(levels) {
            *slot = l.unwrap_or(MISSING);
        }
        v
    }

    pub fn len(&self) -> usize {
        usize::from(self.len)
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, c: usize) -> Option<u8> {
        let l = self.levels[c];
        (c < self.len() && l != MISSING).then_some(l)
    }

    pub fn levels(&self) -> impl Iterator<Item = Option<u8>> + '_ {
        (0..self.len()).map(|c| self.get(c))
    }
}

/// Forename projections for the embedding comparator, computed once per
/// distinct name and shared read-only.
#[derive(Debug, Clone)]
pub struct EmbeddingSupport {
    pub doc: EmbeddingDocument,
    pub stats: CorpusStats,
    cache: HashMap<String, Option<Projection>>,
}

impl EmbeddingSupport {
    pub fn new(doc: EmbeddingDocument, stats: CorpusStats) -> Self {
        EmbeddingSupport { doc, stats, cache: HashMap::new() }
    }

    /// Pre-compute projections for every forename in `records`.
    pub fn warm<'a, I: IntoIterator<Item = &'a PersonRecord>>(&mut self, records: I) {
        let mut names: Vec<&str> = records
            .into_iter()
            .map(|r| r.forename.as_str())
            .filter(|n| !n.is_empty() && !self.cache.contains_key(*n))
            .collect();
        names.sort_unstable();
        names.dedup();
        let computed: Vec<(String, Option<Projection>)> =
            names.par_iter().map(|n| (n.to_string(), self.compute(n))).collect();
        self.cache.extend(computed);
    }

    fn compute(&self, name: &str) -> Option<Projection> {
        extract_features(name, &self.stats).ok().map(|v| project(&v, &self.doc.model))
    }

    pub fn projection(&self, name: &str) -> Option<Projection> {
        match self.cache.get(name) {
            Some(p) => *p,
            None => self.compute(name),
        }
    }
}

fn band_jw(a: &[char], b: &[char], bands: &[f64]) -> usize {
    let s = string_metrics::jaro_winkler_chars(a, b);
    bands.iter().position(|&t| s >= t).unwrap_or(bands.len())
}

fn band_lev(a: &[char], b: &[char], bands: &[usize]) -> usize {
    let d = string_metrics::levenshtein_chars(a, b);
    bands.iter().position(|&t| d <= t).unwrap_or(bands.len())
}

/// First satisfied level of every column for the pair (a, b).
pub fn compare(
    spec: &ComparisonSpec,
    a: &PersonRecord,
    b: &PersonRecord,
    support: Option<&EmbeddingSupport>,
) -> ComparisonVector {
    let mut levels = [None; MAX_COLUMNS];
    for (slot, col) in levels.iter_mut().zip(&spec.columns) {
        let (va, vb) = (a.name(col.field), b.name(col.field));
        if va.is_empty() || vb.is_empty() {
            continue;
        }
        let offset = usize::from(col.exact_level);
        if col.exact_level && va == vb {
            *slot = Some(0);
            continue;
        }
        let level = match &col.comparator {
            Comparator::JaroWinkler { bands } => {
                let (ca, cb): (Vec<char>, Vec<char>) = (va.chars().collect(), vb.chars().collect());
                Some(band_jw(&ca, &cb, bands))
            }
            Comparator::Levenshtein { bands } => {
                let (ca, cb): (Vec<char>, Vec<char>) = (va.chars().collect(), vb.chars().collect());
                Some(band_lev(&ca, &cb, bands))
            }
            Comparator::PcCluster => {
                let s = support.expect("embedding support required for the combined model");
                match (s.projection(va), s.projection(vb)) {
                    (Some(p), Some(q)) => Some(4 - usize::from(discretise(pc_distance(&p, &q), &s.doc.thresholds))),
                    _ => None,
                }
            }
            Comparator::PcComponent { component } => {
                let s = support.expect("embedding support required for the combined model");
                let cuts = s
                    .doc
                    .component_thresholds
                    .as_ref()
                    .and_then(|c| c.get(*component))
                    .expect("per-component thresholds fitted");
                match (s.projection(va), s.projection(vb)) {
                    (Some(p), Some(q)) => {
                        Some(4 - usize::from(discretise((p[*component] - q[*component]).abs(), cuts)))
                    }
                    _ => None,
                }
            }
        };
        *slot = level.map(|l| (l + offset) as u8);
    }
    ComparisonVector::new(&levels[..spec.columns.len()])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(f: &str, s: &str) -> PersonRecord {
        PersonRecord {
            id: 1u64.into(),
            forename: f.into(),
            surname: s.into(),
            birth_year: Some(1990),
            gender: "F".into(),
            group: "X".into(),
        }
    }

    #[test]
    fn levels() {
        let spec = ComparisonSpec::for_family(ModelFamily::Jw, &LevelConfig::default());
        spec.validate().unwrap();
        let v = compare(&spec, &rec("ANNA", "LEE"), &rec("ANNA", "LEE"), None);
        assert_eq!(v.levels().collect::<Vec<_>>(), vec![Some(0), Some(0)]);
        // JW 0.9611 falls in the >= 0.92 band
        let v = compare(&spec, &rec("MARTHA", "LEE"), &rec("MARHTA", "LI"), None);
        assert_eq!(v.get(0), Some(1));
        let v = compare(&spec, &rec("", "LEE"), &rec("ANNA", "QQQ"), None);
        assert_eq!(v.get(0), None);
        assert_eq!(v.get(1), Some(4));

        let spec = ComparisonSpec::for_family(ModelFamily::LevenshteinNoTf, &LevelConfig::default());
        let v = compare(&spec, &rec("KITTEN", "AB"), &rec("SITTING", "AC"), None);
        assert_eq!(v.levels().collect::<Vec<_>>(), vec![Some(3), Some(1)]);
    }

    #[test]
    fn combined_wiring() {
        let spec = ComparisonSpec::for_family(ModelFamily::Combined, &LevelConfig::default());
        assert_eq!(spec.columns.len(), 2);
        assert_eq!(spec.columns[0].comparator, Comparator::PcCluster);
        assert!(!spec.columns[0].exact_level && !spec.columns[0].tf);
        assert!(spec.columns[1].tf);
        assert_eq!(spec.columns[0].n_levels(), 5);
        let per = LevelConfig { per_component: true, ..Default::default() };
        assert_eq!(ComparisonSpec::for_family(ModelFamily::Combined, &per).columns.len(), 9);
    }

    #[test]
    fn bad_bands_rejected() {
        let cfg = LevelConfig { jw_bands: vec![0.7, 0.9], ..Default::default() };
        assert!(ComparisonSpec::for_family(ModelFamily::Jw, &cfg).validate().is_err());
    }
}
