//! Replicate corruption under three exposure settings.
//!
//! Exposure (who gets corrupted) and mechanism (how) are decided separately.
//! Exposure is an exact count per group; mechanism is a cell drawn from an
//! error profile and realised on the name by generating candidate edits and
//! keeping the first one whose classification reproduces the cell.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiler::{
    classify_edit, Cell, CharInventory, DistanceBucket, EditType, ErrorProfile, Position, ProfileSet,
};
use crate::record::{Dataset, NameField, PersonRecord, RecordId};
use crate::rng::StreamKey;
use crate::string_metrics::{self, EditScript};

/// Random proposals tried per rung of the fallback ladder.
const ATTEMPTS_PER_RUNG: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SettingKind {
    #[serde(rename = "uniform")]
    Uniform,
    #[serde(rename = "equal_exposure_ethnic_mechanism")]
    EqualExposure,
    #[serde(rename = "disproportionate")]
    Disproportionate,
}

impl SettingKind {
    pub const ALL: [SettingKind; 3] = [SettingKind::Uniform, SettingKind::EqualExposure, SettingKind::Disproportionate];

    pub fn as_str(self) -> &'static str {
        match self {
            SettingKind::Uniform => "uniform",
            SettingKind::EqualExposure => "equal_exposure_ethnic_mechanism",
            SettingKind::Disproportionate => "disproportionate",
        }
    }

    /// Short label used in output tables.
    pub fn label(self) -> &'static str {
        match self {
            SettingKind::Uniform => "setting1",
            SettingKind::EqualExposure => "setting2",
            SettingKind::Disproportionate => "setting3",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "uniform" | "setting1" | "1" => Ok(SettingKind::Uniform),
            "equal_exposure_ethnic_mechanism" | "equal_exposure" | "setting2" | "2" => Ok(SettingKind::EqualExposure),
            "disproportionate" | "setting3" | "3" => Ok(SettingKind::Disproportionate),
            other => Err(Error::Config(format!("unknown corruption setting {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSetting {
    pub kind: SettingKind,
    pub overall_rate: f64,
    /// Relative exposure weights; only for the disproportionate setting.
    pub group_weights: Option<BTreeMap<String, f64>>,
    pub replicate_seed: u64,
    /// Groups missing from the profile use the pooled distribution instead of
    /// failing.
    #[serde(default)]
    pub pooled_fallback: bool,
}

impl CorruptionSetting {
    pub fn new(kind: SettingKind, overall_rate: f64, replicate_seed: u64) -> Self {
        CorruptionSetting { kind, overall_rate, group_weights: None, replicate_seed, pooled_fallback: false }
    }

    pub fn with_weights(mut self, weights: BTreeMap<String, f64>) -> Self {
        self.group_weights = Some(weights);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.overall_rate) {
            return Err(Error::Config(format!("corruption rate {} outside [0, 1)", self.overall_rate)));
        }
        match (self.kind, &self.group_weights) {
            (SettingKind::Disproportionate, None) => {
                Err(Error::Config("disproportionate setting needs group weights".into()))
            }
            (SettingKind::Disproportionate, Some(w)) => {
                if let Some((g, v)) = w.iter().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
                    return Err(Error::Config(format!("weight for {g:?} must be positive, got {v}")));
                }
                Ok(())
            }
            (_, Some(_)) => Err(Error::Config(format!(
                "group weights are only valid for the disproportionate setting, not {}",
                self.kind.as_str()
            ))),
            (_, None) => Ok(()),
        }
    }

    fn key(&self) -> StreamKey {
        StreamKey::new(self.replicate_seed)
    }
}

/// Exact per-group corruption counts for one field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposurePlan {
    pub field: NameField,
    pub budget: usize,
    pub eligible: BTreeMap<String, usize>,
    pub targets: BTreeMap<String, usize>,
}

impl ExposurePlan {
    pub fn total(&self) -> usize {
        self.targets.values().sum()
    }

    /// Share of the budget assigned to each group.
    pub fn shares(&self) -> BTreeMap<String, f64> {
        let total = self.total().max(1) as f64;
        self.targets.iter().map(|(g, &n)| (g.clone(), n as f64 / total)).collect()
    }
}

fn exposure_key(setting: &CorruptionSetting, field: NameField, id: &RecordId) -> u64 {
    setting.key().with_str("exposure").with_str(field.as_str()).with_str(&id.0).value()
}

fn eligible_by_group(dataset: &Dataset, field: NameField) -> BTreeMap<String, Vec<&PersonRecord>> {
    let mut out: BTreeMap<String, Vec<&PersonRecord>> = BTreeMap::new();
    for r in dataset.iter() {
        let entry = out.entry(r.group.clone()).or_default();
        if r.is_corruptible(field) {
            entry.push(r);
        }
    }
    out
}

/// Integer apportionment of `total` by `weights` (largest remainder).
/// Remainder ties go to the larger weight, then the smaller name.
pub fn largest_remainder(total: usize, weights: &BTreeMap<String, f64>) -> BTreeMap<String, usize> {
    let sum: f64 = weights.values().sum();
    let mut out: BTreeMap<String, usize> = weights.keys().map(|g| (g.clone(), 0)).collect();
    if total == 0 || sum <= 0.0 {
        return out;
    }
    let mut rems = Vec::with_capacity(weights.len());
    let mut assigned = 0usize;
    for (g, &w) in weights {
        let quota = total as f64 * w / sum;
        let floor = quota.floor() as usize;
        out.insert(g.clone(), floor);
        assigned += floor;
        rems.push((quota - floor as f64, w, g.clone()));
    }
    rems.sort_by(|a, b| {
        b.0.partial_cmp(&a.0).unwrap().then(b.1.partial_cmp(&a.1).unwrap()).then_with(|| a.2.cmp(&b.2))
    });
    for (_, _, g) in rems.into_iter().take(total.saturating_sub(assigned)) {
        *out.get_mut(&g).unwrap() += 1;
    }
    out
}

pub fn plan_exposure(setting: &CorruptionSetting, dataset: &Dataset, field: NameField) -> Result<ExposurePlan> {
    setting.validate()?;
    if dataset.is_empty() {
        return Err(Error::Invalid("cannot plan exposure on an empty dataset".into()));
    }
    let by_group = eligible_by_group(dataset, field);
    let eligible: BTreeMap<String, usize> = by_group.iter().map(|(g, v)| (g.clone(), v.len())).collect();
    let n_eligible: usize = eligible.values().sum();
    let rate = setting.overall_rate;

    let targets = match setting.kind {
        SettingKind::Uniform => {
            let budget = (rate * n_eligible as f64).round() as usize;
            // simple random sample over everyone: the smallest keys win
            let mut keyed: Vec<(u64, &str)> = by_group
                .iter()
                .flat_map(|(g, rs)| rs.iter().map(move |r| (exposure_key(setting, field, &r.id), g.as_str())))
                .collect();
            keyed.sort_unstable();
            let mut t: BTreeMap<String, usize> = eligible.keys().map(|g| (g.clone(), 0)).collect();
            for (_, g) in keyed.into_iter().take(budget) {
                *t.get_mut(g).unwrap() += 1;
            }
            t
        }
        SettingKind::EqualExposure => {
            eligible.iter().map(|(g, &n)| (g.clone(), (rate * n as f64).round() as usize)).collect()
        }
        SettingKind::Disproportionate => {
            let budget = (rate * n_eligible as f64).round() as usize;
            if budget > n_eligible {
                return Err(Error::InfeasibleBudget { budget, eligible: n_eligible });
            }
            let all_weights = setting.group_weights.as_ref().expect("validated");
            let mut weights = BTreeMap::new();
            for g in eligible.keys() {
                let w = all_weights.get(g).ok_or_else(|| Error::MissingWeight(g.clone()))?;
                weights.insert(g.clone(), *w);
            }
            allocate_with_capacity(budget, &weights, &eligible)
        }
    };
    let budget = targets.values().sum();
    Ok(ExposurePlan { field, budget, eligible, targets })
}

/// Largest-remainder allocation, then repeated redistribution of whatever
/// exceeds a group's capacity to groups with room left, by weight.
fn allocate_with_capacity(
    budget: usize,
    weights: &BTreeMap<String, f64>,
    capacity: &BTreeMap<String, usize>,
) -> BTreeMap<String, usize> {
    let mut alloc = largest_remainder(budget, weights);
    loop {
        let mut excess = 0usize;
        for (g, n) in alloc.iter_mut() {
            let cap = capacity[g];
            if *n > cap {
                excess += *n - cap;
                *n = cap;
            }
        }
        if excess == 0 {
            return alloc;
        }
        let open: BTreeMap<String, f64> =
            weights.iter().filter(|(g, _)| alloc[*g] < capacity[*g]).map(|(g, w)| (g.clone(), *w)).collect();
        if open.is_empty() {
            // only reachable when budget > total capacity, which is rejected earlier
            return alloc;
        }
        for (g, extra) in largest_remainder(excess, &open) {
            *alloc.get_mut(&g).unwrap() += extra;
        }
    }
}

/// Draw one mechanism cell. `group = None` draws from the pooled distribution.
pub fn sample_mechanism<R: Rng + ?Sized>(
    profile: &ErrorProfile,
    group: Option<&str>,
    pooled_fallback: bool,
    rng: &mut R,
) -> Result<Cell> {
    let dist = match group {
        None => &profile.pooled,
        Some(g) => match profile.group(g) {
            Some(p) if !p.is_empty() => p,
            _ if pooled_fallback => &profile.pooled,
            _ => return Err(Error::MissingGroupProfile(g.to_string())),
        },
    };
    if dist.is_empty() {
        return Err(Error::MissingGroupProfile(group.unwrap_or("POOLED").to_string()));
    }
    Ok(dist.sample(rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corruption {
    pub corrupted: String,
    pub script: EditScript,
    /// Classification of (original, corrupted); equals the requested cell
    /// unless `fallback` is set.
    pub realised: Cell,
    pub fallback: bool,
}

fn draw_char<R: Rng + ?Sized>(inv: &CharInventory, pos: Position, avoid: Option<char>, rng: &mut R) -> char {
    for _ in 0..8 {
        let c = inv.sample(pos, rng);
        if Some(c) != avoid {
            return c;
        }
    }
    // inventory dominated by one letter; step through the alphabet instead
    let base = avoid.filter(char::is_ascii_uppercase).map_or(0, |c| c as u8 - b'A');
    char::from(b'A' + (base + 1 + rng.gen_range(0..25u8)) % 26)
}

/// Candidate source indices (or insertion slots when `slots`) for a region.
fn region_indices(n: usize, pos: Position, slots: bool) -> (Vec<usize>, Vec<usize>) {
    let top = if slots { n } else { n.saturating_sub(1) };
    let denom = top.max(1) as f64;
    let (first, second): (Vec<usize>, Vec<usize>) = (0..=top).partition(|&i| (i as f64) / denom < 0.5);
    match pos {
        Position::FirstHalf => (first, Vec::new()),
        Position::SecondHalf => (second, Vec::new()),
        _ => (first, second),
    }
}

/// One random proposal of `k` edits of a single kind aimed at `pos`.
fn propose<R: Rng + ?Sized>(
    src: &[char],
    kind: EditType,
    k: usize,
    pos: Position,
    inv: &CharInventory,
    rng: &mut R,
) -> Option<String> {
    let n = src.len();
    match kind {
        EditType::Deletion | EditType::Replacement => {
            if kind == EditType::Deletion && k >= n || k > n {
                return None;
            }
            let picked: Vec<usize> = match pos {
                Position::Start if kind == EditType::Deletion => (0..k).collect(),
                Position::Start => (k == 1).then(|| vec![0])?,
                Position::End if kind == EditType::Deletion => (n - k..n).collect(),
                Position::End => (k == 1).then(|| vec![n - 1])?,
                Position::FirstHalf | Position::SecondHalf => {
                    let (pool, _) = region_indices(n, pos, false);
                    if pool.len() < k {
                        return None;
                    }
                    pool.choose_multiple(rng, k).copied().collect()
                }
                Position::Across => {
                    let (first, second) = region_indices(n, pos, false);
                    if k < 2 || first.is_empty() || second.is_empty() {
                        return None;
                    }
                    let a = *first.choose(rng)?;
                    let b = *second.choose(rng)?;
                    let rest: Vec<usize> = (0..n).filter(|&i| i != a && i != b).collect();
                    let mut v: Vec<usize> = rest.choose_multiple(rng, k - 2).copied().collect();
                    v.extend([a, b]);
                    v
                }
            };
            let picked: HashSet<usize> = picked.into_iter().collect();
            let mut out = String::with_capacity(n + 1);
            for (i, &c) in src.iter().enumerate() {
                if !picked.contains(&i) {
                    out.push(c);
                } else if kind == EditType::Replacement {
                    out.push(draw_char(inv, pos, Some(c), rng));
                }
            }
            Some(out)
        }
        EditType::Insertion => {
            let mut slots: Vec<usize> = match pos {
                Position::Start => vec![0; k],
                Position::End => vec![n; k],
                Position::FirstHalf | Position::SecondHalf => {
                    let (pool, _) = region_indices(n, pos, true);
                    (0..k).map(|_| *pool.choose(rng).unwrap()).collect()
                }
                Position::Across => {
                    if k < 2 {
                        return None;
                    }
                    let (first, second) = region_indices(n, pos, true);
                    let mut v = vec![*first.choose(rng)?, *second.choose(rng)?];
                    v.extend((2..k).map(|_| rng.gen_range(0..=n)));
                    v
                }
            };
            slots.sort_unstable();
            let mut out = String::with_capacity(n + k);
            let mut s = slots.iter().peekable();
            for i in 0..=n {
                while s.next_if(|&&x| x == i).is_some() {
                    out.push(draw_char(inv, pos, None, rng));
                }
                if i < n {
                    out.push(src[i]);
                }
            }
            Some(out)
        }
    }
}

fn realises(original: &str, candidate: &str, cell: Cell) -> bool {
    candidate != original
        && !candidate.is_empty()
        && string_metrics::normalize_name(candidate) == candidate
        && classify_edit(original, candidate).is_ok_and(|c| c.cell() == cell)
}

/// Requested cell first, then the degradation ladder: smaller distance, then
/// other positions, then other types.
fn ladder(cell: Cell) -> Vec<Cell> {
    let k = cell.bucket.value();
    let buckets = move || (1..=k).rev().filter_map(DistanceBucket::new);
    let positions: Vec<Position> =
        std::iter::once(cell.position).chain(Position::ALL.into_iter().filter(|&p| p != cell.position)).collect();
    let types: Vec<EditType> = std::iter::once(cell.kind)
        .chain([EditType::Replacement, EditType::Deletion, EditType::Insertion].into_iter().filter(|&t| t != cell.kind))
        .collect();
    let mut out = Vec::new();
    for &kind in &types {
        for &position in &positions {
            out.extend(buckets().map(|bucket| Cell { kind, bucket, position }));
        }
    }
    out
}

/// Corrupt `name` so that its classification against the original matches
/// `cell`, degrading the cell when the name cannot carry it.
pub fn apply_corruption<R: Rng + ?Sized>(name: &str, cell: Cell, inv: &CharInventory, rng: &mut R) -> Corruption {
    assert!(!name.is_empty(), "cannot corrupt an empty name");
    let src: Vec<char> = name.chars().collect();
    for (rung, target) in ladder(cell).into_iter().enumerate() {
        for _ in 0..ATTEMPTS_PER_RUNG {
            let Some(candidate) = propose(&src, target.kind, target.bucket.edits(), target.position, inv, rng) else {
                break;
            };
            if realises(name, &candidate, target) {
                if rung > 0 {
                    debug!("{name}: {cell} degraded to {target}");
                }
                return Corruption {
                    script: string_metrics::edit_script(name, &candidate),
                    corrupted: candidate,
                    realised: target,
                    fallback: rung > 0,
                };
            }
        }
    }
    // last resort: replace the final character
    let mut chars = src.clone();
    let last = chars.len() - 1;
    chars[last] = draw_char(inv, Position::End, Some(chars[last]), rng);
    if !chars[last].is_alphabetic() {
        chars[last] = if src[last] == 'A' { 'B' } else { 'A' };
    }
    let corrupted: String = chars.into_iter().collect();
    let realised = classify_edit(name, &corrupted).expect("differs").cell();
    Corruption { script: string_metrics::edit_script(name, &corrupted), corrupted, realised, fallback: true }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub id: RecordId,
    pub field: NameField,
    pub group: String,
    pub exposed: bool,
    pub cell: Option<Cell>,
    pub script: Option<EditScript>,
    pub fallback: bool,
    pub original: String,
    pub corrupted: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorruptionAudit {
    pub rows: Vec<AuditRow>,
}

impl CorruptionAudit {
    pub fn exposed(&self, field: NameField) -> impl Iterator<Item = &AuditRow> {
        self.rows.iter().filter(move |r| r.exposed && r.field == field)
    }

    /// Realised exposure counts by group for one field.
    pub fn exposure_counts(&self, field: NameField) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.field == field) {
            *out.entry(r.group.clone()).or_insert(0) += usize::from(r.exposed);
        }
        out
    }

    /// Ids with at least one corrupted field, with which fields.
    pub fn status_by_id(&self) -> BTreeMap<&RecordId, (bool, bool)> {
        let mut out: BTreeMap<&RecordId, (bool, bool)> = BTreeMap::new();
        for r in &self.rows {
            let e = out.entry(&r.id).or_default();
            match r.field {
                NameField::Forename => e.0 |= r.exposed,
                NameField::Surname => e.1 |= r.exposed,
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "id",
            "field",
            "exposed",
            "type",
            "bucket",
            "position",
            "fallback",
            "original",
            "corrupted",
            "script",
        ])?;
        for r in &self.rows {
            let (t, b, p) = match r.cell {
                Some(c) => (c.kind.as_str().to_string(), c.bucket.to_string(), c.position.as_str().to_string()),
                None => Default::default(),
            };
            wtr.write_record([
                r.id.0.as_str(),
                r.field.as_str(),
                if r.exposed { "true" } else { "false" },
                &t,
                &b,
                &p,
                if r.fallback { "true" } else { "false" },
                &r.original,
                &r.corrupted,
                &r.script.as_ref().map(EditScript::render).unwrap_or_default(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Ids selected for exposure: within each group, the `target` smallest keys.
pub fn select_exposed(setting: &CorruptionSetting, dataset: &Dataset, plan: &ExposurePlan) -> HashSet<RecordId> {
    let mut out = HashSet::with_capacity(plan.total());
    for (g, rs) in eligible_by_group(dataset, plan.field) {
        let target = plan.targets.get(&g).copied().unwrap_or(0);
        let mut keyed: Vec<(u64, &RecordId)> =
            rs.iter().map(|r| (exposure_key(setting, plan.field, &r.id), &r.id)).collect();
        keyed.sort_unstable();
        out.extend(keyed.into_iter().take(target).map(|(_, id)| id.clone()));
    }
    out
}

/// Apply one corruption setting to both name fields independently.
pub fn corrupt_dataset(
    dataset: &Dataset,
    setting: &CorruptionSetting,
    profiles: &ProfileSet,
) -> Result<(Dataset, CorruptionAudit)> {
    setting.validate()?;
    let mut plans = Vec::new();
    for field in NameField::ALL {
        let plan = plan_exposure(setting, dataset, field)?;
        let selected = select_exposed(setting, dataset, &plan);
        plans.push((field, selected));
    }
    let pooled = setting.kind == SettingKind::Uniform;

    let results: Vec<Result<(PersonRecord, Vec<AuditRow>)>> = dataset
        .records()
        .par_iter()
        .map(|r| {
            let mut out = r.clone();
            let mut rows = Vec::with_capacity(2);
            for (field, selected) in &plans {
                let original = r.name(*field).to_string();
                let mut row = AuditRow {
                    id: r.id.clone(),
                    field: *field,
                    group: r.group.clone(),
                    exposed: false,
                    cell: None,
                    script: None,
                    fallback: false,
                    corrupted: original.clone(),
                    original,
                };
                if selected.contains(&r.id) {
                    let mut rng = setting.key().with_str("mechanism").with_str(field.as_str()).with_str(&r.id.0).rng();
                    let group = (!pooled).then_some(r.group.as_str());
                    let cell = sample_mechanism(profiles.field(*field), group, setting.pooled_fallback, &mut rng)?;
                    let c = apply_corruption(&row.original, cell, &profiles.char_inventory, &mut rng);
                    *out.name_mut(*field) = c.corrupted.clone();
                    row.exposed = true;
                    row.cell = Some(cell);
                    row.script = Some(c.script);
                    row.fallback = c.fallback;
                    row.corrupted = c.corrupted;
                }
                rows.push(row);
            }
            Ok((out, rows))
        })
        .collect();

    let mut records = Vec::with_capacity(dataset.len());
    let mut audit = CorruptionAudit { rows: Vec::with_capacity(2 * dataset.len()) };
    for res in results {
        let (r, rows) = res?;
        records.push(r);
        audit.rows.extend(rows);
    }
    let fallbacks = audit.rows.iter().filter(|r| r.fallback).count();
    if fallbacks > 0 {
        warn!("{fallbacks} corruption events used the fallback ladder");
    }
    Ok((Dataset::new(records)?, audit))
}

/// Weights bundled for the disproportionate setting (initial and realised
/// adjusted shares per group).
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct ExposureWeight {
    pub initial: f64,
    pub adjusted: f64,
}

pub fn reference_exposure_weights() -> BTreeMap<String, ExposureWeight> {
    serde_json::from_str(include_str!("../fixtures/setting3_exposure_weights.json"))
        .expect("bundled weights fixture parses")
}

/// The initial weights of [`reference_exposure_weights`].
pub fn default_disproportionate_weights() -> BTreeMap<String, f64> {
    reference_exposure_weights().into_iter().map(|(g, w)| (g, w.initial)).collect()
}
