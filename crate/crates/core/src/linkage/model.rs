//! Fitted Fellegi-Sunter models and match weights.

use std::collections::HashMap;

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::blocking::{block, BlockField, BlockingRule, Candidates, KeyPart};
use super::comparison::{compare, ComparisonSpec, ComparisonVector, EmbeddingSupport, ModelFamily};
use super::em::{default_m_init, em_fit, estimate_u, EmFit, EmOptions, PatternCounts};
use crate::error::{Error, Result};
use crate::record::{Dataset, NameField, PersonRecord};
use crate::rng::StreamKey;

/// Relative value frequencies of each name field in the reference dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TfTables {
    pub forename: HashMap<String, f64>,
    pub surname: HashMap<String, f64>,
    /// Lower bound on a term-frequency u: 1 / (10 N).
    pub u_floor: f64,
}

impl TfTables {
    pub fn from_dataset(d: &Dataset) -> Self {
        let n = d.len().max(1) as f64;
        let table = |field: NameField| {
            let mut counts: HashMap<String, u64> = HashMap::new();
            let mut total = 0u64;
            for r in d.iter() {
                let v = r.name(field);
                if !v.is_empty() {
                    *counts.entry(v.to_string()).or_insert(0) += 1;
                    total += 1;
                }
            }
            counts.into_iter().map(|(k, c)| (k, c as f64 / total.max(1) as f64)).collect::<HashMap<_, _>>()
        };
        TfTables { forename: table(NameField::Forename), surname: table(NameField::Surname), u_floor: 1.0 / (10.0 * n) }
    }

    pub fn frequency(&self, field: NameField, value: &str) -> f64 {
        let t = match field {
            NameField::Forename => &self.forename,
            NameField::Surname => &self.surname,
        };
        t.get(value).copied().unwrap_or(0.0)
    }

    /// Pair-specific exact-agreement u for `value`.
    pub fn u_exact(&self, field: NameField, value: &str) -> f64 {
        self.frequency(field, value).max(self.u_floor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkageModel {
    pub family: ModelFamily,
    pub spec: ComparisonSpec,
    pub lambda: f64,
    pub m: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub level_labels: Vec<Vec<String>>,
}

impl LinkageModel {
    pub fn from_fit(family: ModelFamily, spec: ComparisonSpec, fit: EmFit) -> Self {
        let level_labels = spec.columns.iter().map(|c| c.level_labels()).collect();
        LinkageModel {
            family,
            spec,
            lambda: fit.lambda,
            m: fit.m,
            u: fit.u,
            converged: fit.converged,
            iterations: fit.iterations,
            level_labels,
        }
    }

    pub fn prior_weight(&self) -> f64 {
        (self.lambda / (1.0 - self.lambda)).log2()
    }

    /// log2 prior odds plus the summed log2 m/u of every non-missing column.
    /// With `tf`, an exact agreement on a TF column uses the agreed value's
    /// prevalence as u.
    pub fn match_weight(&self, v: &ComparisonVector, right: Option<&PersonRecord>, tf: Option<&TfTables>) -> f64 {
        let mut w = self.prior_weight();
        for (c, level) in v.levels().enumerate() {
            let Some(l) = level else { continue };
            let l = usize::from(l);
            let col = &self.spec.columns[c];
            let u = match (col.tf && col.exact_level && l == 0, tf, right) {
                (true, Some(t), Some(r)) => t.u_exact(col.field, r.name(col.field)),
                _ => self.u[c][l],
            };
            w += (self.m[c][l] / u).log2();
        }
        w
    }

    pub fn uses_tf(&self) -> bool {
        self.spec.columns.iter().any(|c| c.tf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub em: EmOptions,
    /// Random pairs drawn to estimate u.
    pub u_pairs: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { em: EmOptions::default(), u_pairs: 100_000, seed: 0 }
    }
}

/// Comparison vectors of every blocked pair.
pub fn blocked_patterns(
    spec: &ComparisonSpec,
    left: &[PersonRecord],
    right: &Dataset,
    candidates: &Candidates,
    support: Option<&EmbeddingSupport>,
) -> PatternCounts {
    let maps: Vec<HashMap<ComparisonVector, u64>> = left
        .par_iter()
        .zip(&candidates.per_left)
        .fold(HashMap::new, |mut acc, (l, cands)| {
            for &j in cands {
                *acc.entry(compare(spec, l, right.get(j as usize), support)).or_insert(0) += 1;
            }
            acc
        })
        .collect();
    let mut merged: HashMap<ComparisonVector, u64> = HashMap::new();
    for m in maps {
        for (k, v) in m {
            *merged.entry(k).or_insert(0) += v;
        }
    }
    PatternCounts::from_map(spec.columns.len(), merged)
}

/// Comparison vectors of keyed random (left, right) pairs with distinct ids.
pub fn random_patterns(
    spec: &ComparisonSpec,
    left: &[PersonRecord],
    right: &Dataset,
    n_pairs: usize,
    seed: u64,
    support: Option<&EmbeddingSupport>,
) -> PatternCounts {
    const CHUNK: usize = 4096;
    let n_chunks = n_pairs.div_ceil(CHUNK);
    let vectors: Vec<ComparisonVector> = (0..n_chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = StreamKey::new(seed).with_str("u_pairs").with_u64(c as u64).rng();
            let take = CHUNK.min(n_pairs - c * CHUNK);
            let mut out = Vec::with_capacity(take);
            while out.len() < take {
                let a = &left[rng.gen_range(0..left.len())];
                let b = right.get(rng.gen_range(0..right.len()));
                if a.id != b.id || right.len() == 1 {
                    out.push(compare(spec, a, b, support));
                }
            }
            out
        })
        .collect();
    PatternCounts::from_vectors(spec.columns.len(), vectors)
}

/// Pairs agreeing on birth year, gender and the exact value of the name
/// field other than `field`. Training a field's columns on these pairs keeps
/// the field itself out of the blocking, so non-matches among them look like
/// random pairs on that field.
pub fn training_rule(field: NameField) -> BlockingRule {
    let other = match field {
        NameField::Forename => BlockField::Surname,
        NameField::Surname => BlockField::Forename,
    };
    BlockingRule {
        name: format!("train_{}", field.as_str()),
        parts: vec![
            KeyPart::Field { field: BlockField::BirthYear },
            KeyPart::Field { field: BlockField::Gender },
            KeyPart::Field { field: other },
        ],
    }
}

/// Estimate u from random pairs and m by EM, one name field at a time on its
/// training pairs (see [`training_rule`]), with u held fixed. λ is then
/// estimated by EM over the real blocked pairs with m and u held fixed,
/// starting from the share of blocked pairs that could be true links (one per
/// left record).
pub fn fit_model(
    family: ModelFamily,
    spec: ComparisonSpec,
    left: &[PersonRecord],
    right: &Dataset,
    candidates: &Candidates,
    support: Option<&EmbeddingSupport>,
    opts: &FitOptions,
) -> Result<LinkageModel> {
    spec.validate()?;
    if spec.needs_embedding() && support.is_none() {
        return Err(Error::Config(format!("model {family} needs a fitted forename embedding")));
    }
    let blocked = blocked_patterns(&spec, left, right, candidates, support);
    if blocked.is_empty() {
        return Err(Error::Invalid("no blocked candidate pairs to fit on".into()));
    }
    let n_levels: Vec<usize> = spec.columns.iter().map(|c| c.n_levels()).collect();
    let random = random_patterns(&spec, left, right, opts.u_pairs, opts.seed, support);
    let u = estimate_u(&random, &n_levels);
    let mut m = default_m_init(&n_levels);
    let mut iterations = 0;
    let mut converged = true;

    for field in NameField::ALL {
        let cols: Vec<usize> = (0..spec.columns.len()).filter(|&c| spec.columns[c].field == field).collect();
        if cols.is_empty() {
            continue;
        }
        let sub = ComparisonSpec { columns: cols.iter().map(|&c| spec.columns[c].clone()).collect() };
        let train = block(left, right, &[training_rule(field)]);
        let mut patterns = blocked_patterns(&sub, left, right, &train, support);
        if patterns.is_empty() {
            warn!("no training pairs for {}; fitting on the blocked pairs", field.as_str());
            patterns = blocked_patterns(&sub, left, right, candidates, support);
        }
        let mut em = opts.em.clone();
        em.fix_m = false;
        em.lambda_init = lambda_start(&train, patterns.total());
        let fit = em_fit(
            &patterns,
            cols.iter().map(|&c| m[c].clone()).collect(),
            cols.iter().map(|&c| u[c].clone()).collect(),
            &em,
        );
        for (k, &c) in cols.iter().enumerate() {
            m[c] = fit.m[k].clone();
        }
        iterations += fit.iterations;
        converged &= fit.converged;
    }

    let mut em = opts.em.clone();
    em.fix_m = true;
    em.lambda_init = lambda_start(candidates, blocked.total());
    let fit = em_fit(&blocked, m, u, &em);
    Ok(LinkageModel::from_fit(
        family,
        spec,
        EmFit { iterations: iterations + fit.iterations, converged: converged && fit.converged, ..fit },
    ))
}

fn lambda_start(candidates: &Candidates, n_pairs: u64) -> f64 {
    let with_candidates = candidates.per_left.iter().filter(|c| !c.is_empty()).count();
    (with_candidates as f64 / n_pairs.max(1) as f64).clamp(0.01, 0.99)
}
