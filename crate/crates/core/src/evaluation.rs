//! Evaluation sampling, outcome classification, error rates, threshold
//! calibration and replicate aggregation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corruption::{largest_remainder, CorruptionAudit};
use crate::error::{Error, Result};
use crate::linkage::{BestCandidate, MatchDecision};
use crate::record::{PersonRecord, RecordId};
use crate::rng::StreamKey;

pub const DEFAULT_TARGET_MMR: f64 = 0.20;
pub const DEFAULT_SAMPLE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionStatus {
    Uncorrupted,
    ForenameOnly,
    SurnameOnly,
    Both,
}

impl CorruptionStatus {
    pub fn from_flags(forename: bool, surname: bool) -> Self {
        match (forename, surname) {
            (false, false) => CorruptionStatus::Uncorrupted,
            (true, false) => CorruptionStatus::ForenameOnly,
            (false, true) => CorruptionStatus::SurnameOnly,
            (true, true) => CorruptionStatus::Both,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionStatus::Uncorrupted => "uncorrupted",
            CorruptionStatus::ForenameOnly => "forename_only",
            CorruptionStatus::SurnameOnly => "surname_only",
            CorruptionStatus::Both => "both",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Stratum {
    pub group: String,
    pub status: CorruptionStatus,
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.group, self.status.as_str())
    }
}

/// Stratum of every record, from the audit alone.
pub fn strata(records: &[PersonRecord], audit: &CorruptionAudit) -> Vec<Stratum> {
    let status = audit.status_by_id();
    records
        .iter()
        .map(|r| {
            let (f, s) = status.get(&r.id).copied().unwrap_or_default();
            Stratum { group: r.group.clone(), status: CorruptionStatus::from_flags(f, s) }
        })
        .collect()
}

/// Proportional stratified sample. Returns record indices in input order.
///
/// The overall size `round(fraction * N)` is split across strata by largest
/// remainder; within a stratum the records with the smallest keyed hashes
/// are taken.
pub fn stratified_sample(records: &[PersonRecord], strata: &[Stratum], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("sample fraction {fraction} outside [0, 1]")));
    }
    if records.len() != strata.len() {
        return Err(Error::Invalid("one stratum per record required".into()));
    }
    let mut members: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in strata.iter().enumerate() {
        members.entry(s.to_string()).or_default().push(i);
    }
    let total = (fraction * records.len() as f64).round() as usize;
    let sizes: BTreeMap<String, f64> = members.iter().map(|(k, v)| (k.clone(), v.len() as f64)).collect();
    let takes = largest_remainder(total, &sizes);
    let key = StreamKey::new(seed).with_str("evaluation_sample");
    let mut chosen = Vec::with_capacity(total);
    for (name, idx) in &members {
        let mut keyed: Vec<(u64, usize)> = idx.iter().map(|&i| (key.with_str(&records[i].id.0).value(), i)).collect();
        keyed.sort_unstable();
        chosen.extend(keyed.into_iter().take(takes[name]).map(|(_, i)| i));
    }
    chosen.sort_unstable();
    Ok(chosen)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub n: u64,
    pub correct: u64,
    pub false_match: u64,
    pub missed: u64,
}

impl OutcomeCounts {
    pub fn add(&mut self, o: Outcome) {
        self.n += 1;
        match o {
            Outcome::Correct => self.correct += 1,
            Outcome::FalseMatch => self.false_match += 1,
            Outcome::Missed => self.missed += 1,
        }
    }

    pub fn merge(&mut self, other: &OutcomeCounts) {
        self.n += other.n;
        self.correct += other.correct;
        self.false_match += other.false_match;
        self.missed += other.missed;
    }

    pub fn fmr(&self) -> Option<f64> {
        (self.n > 0).then(|| self.false_match as f64 / self.n as f64)
    }

    pub fn mmr(&self) -> Option<f64> {
        (self.n > 0).then(|| self.missed as f64 / self.n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Correct,
    FalseMatch,
    Missed,
}

pub fn classify_decision(d: &MatchDecision, gold: &RecordId) -> Outcome {
    match &d.right {
        None => Outcome::Missed,
        Some(r) if r == gold => Outcome::Correct,
        Some(_) => Outcome::FalseMatch,
    }
}

/// Outcome counts per stratum. `gold` maps each left id to its true right id.
pub fn classify_outcomes<G>(
    decisions: &[MatchDecision],
    stratum_of: &HashMap<RecordId, Stratum>,
    gold: G,
) -> Result<BTreeMap<Stratum, OutcomeCounts>>
where
    G: Fn(&RecordId) -> Option<RecordId>,
{
    let mut out: BTreeMap<Stratum, OutcomeCounts> = BTreeMap::new();
    for d in decisions {
        let g = gold(&d.left).ok_or_else(|| Error::MissingGold(d.left.0.clone()))?;
        let s = stratum_of.get(&d.left).ok_or_else(|| Error::MissingGold(d.left.0.clone()))?;
        out.entry(s.clone()).or_default().add(classify_decision(d, &g));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub group: String,
    pub counts: OutcomeCounts,
    pub fmr: Option<f64>,
    pub mmr: Option<f64>,
    /// Percentage points above the reference group.
    pub fmr_disparity_pp: Option<f64>,
    pub mmr_disparity_pp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub reference: String,
    pub overall: OutcomeCounts,
    pub groups: Vec<GroupRates>,
}

impl RateReport {
    pub fn group(&self, g: &str) -> Option<&GroupRates> {
        self.groups.iter().find(|r| r.group == g)
    }
}

/// FMR and MMR per group and overall, with disparities against `reference`.
/// `groups` lists every group to report; groups without records get absent
/// rates rather than zeros.
pub fn rates_and_disparities(
    counts: &BTreeMap<Stratum, OutcomeCounts>,
    groups: &[String],
    reference: &str,
) -> Result<RateReport> {
    let mut by_group: BTreeMap<&str, OutcomeCounts> =
        groups.iter().map(|g| (g.as_str(), OutcomeCounts::default())).collect();
    let mut overall = OutcomeCounts::default();
    for (s, c) in counts {
        by_group.entry(s.group.as_str()).or_default().merge(c);
        overall.merge(c);
    }
    let ref_counts =
        by_group.get(reference).filter(|c| c.n > 0).ok_or_else(|| Error::MissingReference(reference.to_string()))?;
    let (ref_fmr, ref_mmr) = (ref_counts.fmr().unwrap(), ref_counts.mmr().unwrap());
    let groups = by_group
        .into_iter()
        .map(|(g, c)| GroupRates {
            group: g.to_string(),
            counts: c,
            fmr: c.fmr(),
            mmr: c.mmr(),
            fmr_disparity_pp: c.fmr().map(|f| 100.0 * (f - ref_fmr)),
            mmr_disparity_pp: c.mmr().map(|m| 100.0 * (m - ref_mmr)),
        })
        .collect();
    Ok(RateReport { reference: reference.to_string(), overall, groups })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub mmr: f64,
}

/// Missed-match rate when accepting best weights at or above `t`.
pub fn mmr_at(weights: &[Option<f64>], t: f64) -> f64 {
    let missed = weights.iter().filter(|w| !matches!(w, Some(x) if *x >= t)).count();
    missed as f64 / weights.len() as f64
}

/// Threshold whose overall MMR is closest to `target`, scanning every distinct
/// best weight plus both infinities; ties go to the lower threshold.
pub fn calibrate_threshold(weights: &[Option<f64>], target: f64) -> Result<Calibration> {
    if weights.is_empty() {
        return Err(Error::Invalid("calibration needs at least one evaluated record".into()));
    }
    let n = weights.len() as f64;
    let none = weights.iter().filter(|w| w.is_none()).count();
    let mut sorted: Vec<f64> = weights.iter().flatten().copied().collect();
    sorted.sort_by(f64::total_cmp);

    // ascending candidate thresholds with the count of weights strictly below
    let mut candidates: Vec<(f64, usize)> = vec![(f64::NEG_INFINITY, 0)];
    let mut i = 0;
    while i < sorted.len() {
        candidates.push((sorted[i], i));
        let v = sorted[i];
        while i < sorted.len() && sorted[i] == v {
            i += 1;
        }
    }
    candidates.push((f64::INFINITY, sorted.len()));

    let mut best: Option<Calibration> = None;
    for (t, below) in candidates {
        let mmr = (none + below) as f64 / n;
        // strict improvement only, so the lowest threshold wins ties
        if best.is_none_or(|b| (mmr - target).abs() < (b.mmr - target).abs()) {
            best = Some(Calibration { threshold: t, mmr });
        }
    }
    Ok(best.unwrap())
}

/// Convenience for calibration from scored best candidates.
pub fn calibrate_from_best(best: &[BestCandidate], target: f64) -> Result<Calibration> {
    let w: Vec<Option<f64>> = best.iter().map(|b| b.weight).collect();
    calibrate_threshold(&w, target)
}

/// (threshold, MMR, FMR) at each of `thresholds`.
pub fn mmr_curve(best: &[BestCandidate], thresholds: &[f64]) -> Vec<(f64, f64, f64)> {
    let n = best.len().max(1) as f64;
    thresholds
        .iter()
        .map(|&t| {
            let mut missed = 0usize;
            let mut false_match = 0usize;
            for b in best {
                match (b.weight, &b.right) {
                    (Some(w), Some(r)) if w >= t => false_match += usize::from(*r != b.left),
                    _ => missed += 1,
                }
            }
            (t, missed as f64 / n, false_match as f64 / n)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub half_width: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Mean with a two-sided 95% Student-t interval across replicates.
pub fn aggregate_replicates(values: &[f64]) -> Result<ReplicateSummary> {
    let k = values.len();
    if k < 2 {
        return Err(Error::TooFewReplicates(k));
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (k - 1) as f64).map_err(|e| Error::Invalid(e.to_string()))?.inverse_cdf(0.975);
    let half_width = t * var.sqrt() / (k as f64).sqrt();
    Ok(ReplicateSummary {
        values: values.to_vec(),
        mean,
        half_width,
        ci_low: mean - half_width,
        ci_high: mean + half_width,
    })
}
