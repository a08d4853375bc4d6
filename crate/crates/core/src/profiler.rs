//! Within-person discrepancy extraction and empirical error profiles.
//!
//! Records sharing a stable id across two snapshots are compared field by
//! field. Every differing name is reduced to its minimal edit script, which is
//! summarised as an edit type, a distance bucket and a coarse position. The
//! per-group joint distribution of those three is the error profile that the
//! corruption engine replays.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use log::warn;
use rand::Rng;
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{NameField, PersonRecord, RecordId};
use crate::string_metrics::{self, EditKind, EditOp, EditScript};

pub const POOLED_KEY: &str = "POOLED";
pub const MAX_BUCKET: u8 = 7;

/// Three-way edit type used for profile cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EditType {
    #[serde(rename = "del")]
    Deletion,
    #[serde(rename = "ins")]
    Insertion,
    #[serde(rename = "rep")]
    Replacement,
}

impl EditType {
    pub const ALL: [EditType; 3] = [EditType::Deletion, EditType::Insertion, EditType::Replacement];

    pub fn as_str(self) -> &'static str {
        match self {
            EditType::Deletion => "del",
            EditType::Insertion => "ins",
            EditType::Replacement => "rep",
        }
    }

    pub fn kind(self) -> EditKind {
        match self {
            EditType::Deletion => EditKind::Deletion,
            EditType::Insertion => EditKind::Insertion,
            EditType::Replacement => EditKind::Substitution,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Position {
    Start,
    FirstHalf,
    SecondHalf,
    End,
    Across,
}

impl Position {
    pub const ALL: [Position; 5] =
        [Position::Start, Position::FirstHalf, Position::SecondHalf, Position::End, Position::Across];

    pub fn as_str(self) -> &'static str {
        match self {
            Position::Start => "start",
            Position::FirstHalf => "first_half",
            Position::SecondHalf => "second_half",
            Position::End => "end",
            Position::Across => "across",
        }
    }
}

/// Edit distance capped at 7; bucket 7 stands for "7+".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DistanceBucket(u8);

impl DistanceBucket {
    pub fn from_distance(d: usize) -> Self {
        assert!(d >= 1, "distance bucket of an identical pair");
        DistanceBucket(d.min(usize::from(MAX_BUCKET)) as u8)
    }

    pub fn new(b: u8) -> Option<Self> {
        (1..=MAX_BUCKET).contains(&b).then_some(DistanceBucket(b))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Number of edits used to realise this bucket.
    pub fn edits(self) -> usize {
        usize::from(self.0)
    }

    pub fn all() -> impl Iterator<Item = DistanceBucket> {
        (1..=MAX_BUCKET).map(DistanceBucket)
    }
}

impl fmt::Display for DistanceBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 >= MAX_BUCKET {
            write!(f, "{MAX_BUCKET}+")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl std::str::FromStr for DistanceBucket {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let digits = s.trim().trim_end_matches('+');
        digits
            .parse::<u8>()
            .ok()
            .and_then(DistanceBucket::new)
            .ok_or_else(|| Error::Invalid(format!("bad distance bucket {s:?}")))
    }
}

impl Serialize for DistanceBucket {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for DistanceBucket {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// One cell of the joint mechanism distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    #[serde(rename = "type")]
    pub kind: EditType,
    pub bucket: DistanceBucket,
    pub position: Position,
}

impl Cell {
    pub fn new(kind: EditType, bucket: u8, position: Position) -> Self {
        Cell { kind, bucket: DistanceBucket::new(bucket).expect("bucket in 1..=7"), position }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.kind.as_str(), self.bucket, self.position.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditClass {
    pub type_pattern: BTreeSet<EditKind>,
    pub primary: EditType,
    pub bucket: DistanceBucket,
    pub position: Position,
}

impl EditClass {
    pub fn cell(&self) -> Cell {
        Cell { kind: self.primary, bucket: self.bucket, position: self.position }
    }
}

/// Modal op kind, ties broken replacement > deletion > insertion.
pub fn primary_type(ops: &[EditOp]) -> EditType {
    let count = |k: EditKind| ops.iter().filter(|o| o.kind == k).count();
    let (s, d, i) = (count(EditKind::Substitution), count(EditKind::Deletion), count(EditKind::Insertion));
    if s >= d && s >= i {
        EditType::Replacement
    } else if d >= i {
        EditType::Deletion
    } else {
        EditType::Insertion
    }
}

/// Position category of a set of edits against a target of `target_len` chars.
/// Indices are normalised by `max(target_len - 1, 1)`.
pub fn classify_position(ops: &[EditOp], target_len: usize) -> Position {
    if ops.iter().all(|o| o.position == 0) {
        return Position::Start;
    }
    if target_len >= 1 {
        let last = target_len - 1;
        let at_end = |o: &EditOp| o.position == last || (o.kind == EditKind::Deletion && o.position == target_len);
        if ops.iter().all(at_end) {
            return Position::End;
        }
    }
    let denom = target_len.saturating_sub(1).max(1) as f64;
    let norm = |o: &EditOp| o.position as f64 / denom;
    if ops.iter().all(|o| norm(o) < 0.5) {
        Position::FirstHalf
    } else if ops.iter().all(|o| norm(o) >= 0.5) {
        Position::SecondHalf
    } else {
        Position::Across
    }
}

pub fn classify_script(script: &EditScript, target_len: usize) -> Option<EditClass> {
    if script.is_empty() {
        return None;
    }
    Some(EditClass {
        type_pattern: script.ops.iter().map(|o| o.kind).collect(),
        primary: primary_type(&script.ops),
        bucket: DistanceBucket::from_distance(script.len()),
        position: classify_position(&script.ops, target_len),
    })
}

pub fn classify_edit(a: &str, b: &str) -> Result<EditClass> {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let script = string_metrics::edit_script_chars(&a, &b);
    classify_script(&script, b.len()).ok_or_else(|| Error::IdenticalInputs(a.iter().collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyRecord {
    pub person_id: RecordId,
    pub field: NameField,
    pub value_a: String,
    pub value_b: String,
    pub jw: f64,
    pub lev: usize,
    pub class: EditClass,
    pub script: EditScript,
}

impl DiscrepancyRecord {
    pub fn new(person_id: RecordId, field: NameField, a: &str, b: &str) -> Result<Self> {
        let ca: Vec<char> = a.chars().collect();
        let cb: Vec<char> = b.chars().collect();
        let script = string_metrics::edit_script_chars(&ca, &cb);
        let class = classify_script(&script, cb.len()).ok_or_else(|| Error::IdenticalInputs(a.to_string()))?;
        Ok(DiscrepancyRecord {
            person_id,
            field,
            value_a: a.to_string(),
            value_b: b.to_string(),
            jw: string_metrics::jaro_winkler_chars(&ca, &cb),
            lev: script.len(),
            class,
            script,
        })
    }
}

fn check_unique(records: &[PersonRecord]) -> Result<HashMap<&RecordId, &PersonRecord>> {
    let mut map = HashMap::with_capacity(records.len());
    for r in records {
        if map.insert(&r.id, r).is_some() {
            return Err(Error::DuplicateId(r.id.0.clone()));
        }
    }
    Ok(map)
}

/// Deterministically link two snapshots on id and emit one record per
/// differing, non-blank name field, in snapshot-a order.
pub fn pair_snapshots(snap_a: &[PersonRecord], snap_b: &[PersonRecord]) -> Result<Vec<DiscrepancyRecord>> {
    check_unique(snap_a)?;
    let b_by_id = check_unique(snap_b)?;
    let mut out = Vec::new();
    for ra in snap_a {
        let Some(rb) = b_by_id.get(&ra.id) else { continue };
        for field in NameField::ALL {
            let va = string_metrics::normalize_name(ra.name(field));
            let vb = string_metrics::normalize_name(rb.name(field));
            if va.is_empty() || vb.is_empty() || va == vb {
                continue;
            }
            out.push(DiscrepancyRecord::new(ra.id.clone(), field, &va, &vb)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellProbability {
    #[serde(flatten)]
    pub cell: Cell,
    pub p: f64,
}

/// Joint cell distribution of one group.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupProfile {
    pub cells: Vec<CellProbability>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Marginals {
    pub types: BTreeMap<EditType, f64>,
    pub buckets: BTreeMap<DistanceBucket, f64>,
    pub positions: BTreeMap<Position, f64>,
}

impl GroupProfile {
    pub fn from_counts(counts: &BTreeMap<Cell, u64>) -> Self {
        let total: u64 = counts.values().sum();
        let cells = counts
            .iter()
            .filter(|(_, &n)| n > 0)
            .map(|(&cell, &n)| CellProbability { cell, p: n as f64 / total as f64 })
            .collect();
        GroupProfile { cells }
    }

    pub fn probability(&self, cell: Cell) -> f64 {
        self.cells.iter().find(|c| c.cell == cell).map_or(0.0, |c| c.p)
    }

    pub fn total(&self) -> f64 {
        self.cells.iter().map(|c| c.p).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn marginals(&self) -> Marginals {
        let mut m = Marginals::default();
        for c in &self.cells {
            *m.types.entry(c.cell.kind).or_default() += c.p;
            *m.buckets.entry(c.cell.bucket).or_default() += c.p;
            *m.positions.entry(c.cell.position).or_default() += c.p;
        }
        m
    }

    /// Inverse-CDF draw over the cells.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Cell {
        let total = self.total();
        let mut u = rng.gen::<f64>() * total;
        for c in &self.cells {
            if u < c.p {
                return c.cell;
            }
            u -= c.p;
        }
        self.cells.last().expect("sampling an empty profile").cell
    }

    /// Independent product of three marginals, each renormalised to 1.
    pub fn from_marginals(
        types: &BTreeMap<EditType, f64>,
        buckets: &BTreeMap<DistanceBucket, f64>,
        positions: &BTreeMap<Position, f64>,
    ) -> Self {
        let norm = |v: f64, s: f64| if s > 0.0 { v / s } else { 0.0 };
        let (st, sb, sp): (f64, f64, f64) = (types.values().sum(), buckets.values().sum(), positions.values().sum());
        let mut cells = Vec::new();
        for (&kind, &pt) in types {
            for (&bucket, &pb) in buckets {
                for (&position, &pp) in positions {
                    let p = norm(pt, st) * norm(pb, sb) * norm(pp, sp);
                    if p > 0.0 {
                        cells.push(CellProbability { cell: Cell { kind, bucket, position }, p });
                    }
                }
            }
        }
        cells.sort_by_key(|a| a.cell);
        GroupProfile { cells }
    }
}

/// Per-group joint distributions plus the pooled distribution over all groups.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorProfile {
    pub groups: BTreeMap<String, GroupProfile>,
    pub pooled: GroupProfile,
    /// Groups that had no discrepancies of their own and were given the pooled
    /// distribution.
    pub inherited: Vec<String>,
}

impl ErrorProfile {
    pub fn group(&self, group: &str) -> Option<&GroupProfile> {
        self.groups.get(group)
    }
}

impl Serialize for ErrorProfile {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map: BTreeMap<&str, &GroupProfile> = self.groups.iter().map(|(k, v)| (k.as_str(), v)).collect();
        map.insert(POOLED_KEY, &self.pooled);
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ErrorProfile {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let mut map = BTreeMap::<String, GroupProfile>::deserialize(d)?;
        let pooled = map.remove(POOLED_KEY).ok_or_else(|| de::Error::custom("error profile lacks the POOLED entry"))?;
        Ok(ErrorProfile { groups: map, pooled, inherited: Vec::new() })
    }
}

fn count_cells<'a, I: Iterator<Item = &'a DiscrepancyRecord>>(it: I) -> BTreeMap<Cell, u64> {
    let mut counts = BTreeMap::new();
    for d in it {
        *counts.entry(d.class.cell()).or_insert(0) += 1;
    }
    counts
}

/// Normalised joint cell counts for each requested group.
pub fn build_profile<F>(discrepancies: &[DiscrepancyRecord], group_of: F, groups: &[String]) -> Result<ErrorProfile>
where
    F: Fn(&RecordId) -> Option<String>,
{
    let (profile, empty) = build_inner(discrepancies, &group_of, groups)?;
    match empty.into_iter().next() {
        Some(g) => Err(Error::EmptyGroup(g)),
        None => Ok(profile),
    }
}

/// Like [`build_profile`], but a group without discrepancies inherits the
/// pooled distribution (logged, and listed in `inherited`).
pub fn build_profile_with_fallback<F>(
    discrepancies: &[DiscrepancyRecord],
    group_of: F,
    groups: &[String],
) -> Result<ErrorProfile>
where
    F: Fn(&RecordId) -> Option<String>,
{
    let (mut profile, empty) = build_inner(discrepancies, &group_of, groups)?;
    for g in empty {
        warn!("group {g:?} has no discrepancies; using the pooled profile");
        profile.groups.insert(g.clone(), profile.pooled.clone());
        profile.inherited.push(g);
    }
    Ok(profile)
}

fn build_inner<F>(
    discrepancies: &[DiscrepancyRecord],
    group_of: &F,
    groups: &[String],
) -> Result<(ErrorProfile, Vec<String>)>
where
    F: Fn(&RecordId) -> Option<String>,
{
    if discrepancies.is_empty() {
        return Err(Error::EmptyGroup(POOLED_KEY.to_string()));
    }
    let pooled = GroupProfile::from_counts(&count_cells(discrepancies.iter()));
    let mut by_group: BTreeMap<String, Vec<&DiscrepancyRecord>> = BTreeMap::new();
    for d in discrepancies {
        if let Some(g) = group_of(&d.person_id) {
            by_group.entry(g).or_default().push(d);
        }
    }
    let mut profile = ErrorProfile { pooled, ..Default::default() };
    let mut empty = Vec::new();
    for g in groups {
        match by_group.get(g) {
            Some(ds) if !ds.is_empty() => {
                let counts = count_cells(ds.iter().copied());
                profile.groups.insert(g.clone(), GroupProfile::from_counts(&counts));
            }
            _ => empty.push(g.clone()),
        }
    }
    Ok((profile, empty))
}

/// Characters inserted or substituted in observed discrepancies, keyed by
/// where in the target they landed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CharInventory {
    pub by_position: BTreeMap<Position, BTreeMap<char, u64>>,
}

impl CharInventory {
    pub fn from_discrepancies(discrepancies: &[DiscrepancyRecord]) -> Self {
        let mut inv = CharInventory::default();
        for d in discrepancies {
            let target_len = d.value_b.chars().count();
            for op in &d.script.ops {
                if op.kind == EditKind::Deletion || !op.ch.is_alphabetic() {
                    continue;
                }
                let pos = classify_position(std::slice::from_ref(op), target_len);
                *inv.by_position.entry(pos).or_default().entry(op.ch).or_insert(0) += 1;
            }
        }
        inv
    }

    /// Draw a character for an edit at `pos`; uniform A-Z when nothing was
    /// observed there.
    pub fn sample<R: Rng + ?Sized>(&self, pos: Position, rng: &mut R) -> char {
        if let Some(counts) = self.by_position.get(&pos).filter(|c| !c.is_empty()) {
            let total: u64 = counts.values().sum();
            let mut u = rng.gen_range(0..total);
            for (&c, &n) in counts {
                if u < n {
                    return c;
                }
                u -= n;
            }
        }
        char::from(b'A' + rng.gen_range(0..26u8))
    }
}

/// Everything Stage 1 hands to the corruption engine.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProfileSet {
    pub forename: ErrorProfile,
    pub surname: ErrorProfile,
    #[serde(default)]
    pub char_inventory: CharInventory,
}

impl ProfileSet {
    pub fn field(&self, field: NameField) -> &ErrorProfile {
        match field {
            NameField::Forename => &self.forename,
            NameField::Surname => &self.surname,
        }
    }

    /// Profile both fields from paired snapshots; groups without
    /// discrepancies inherit the pooled profile.
    pub fn from_discrepancies(
        discrepancies: &[DiscrepancyRecord],
        group_of: &HashMap<RecordId, String>,
        groups: &[String],
    ) -> Result<Self> {
        let lookup = |id: &RecordId| group_of.get(id).cloned();
        let of_field = |f: NameField| -> Vec<DiscrepancyRecord> {
            discrepancies.iter().filter(|d| d.field == f).cloned().collect()
        };
        Ok(ProfileSet {
            forename: build_profile_with_fallback(&of_field(NameField::Forename), lookup, groups)?,
            surname: build_profile_with_fallback(&of_field(NameField::Surname), lookup, groups)?,
            char_inventory: CharInventory::from_discrepancies(discrepancies),
        })
    }
}

/// Published per-group marginals of edit type, distance and position, in
/// percent, for forenames and surnames.
#[derive(Debug, Clone, Deserialize)]
pub struct ReferenceMarginals {
    pub forename: BTreeMap<String, GroupMarginalsPct>,
    pub surname: BTreeMap<String, GroupMarginalsPct>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct GroupMarginalsPct {
    #[serde(rename = "type")]
    pub types: BTreeMap<EditType, f64>,
    pub distance: BTreeMap<DistanceBucket, f64>,
    pub position: BTreeMap<Position, f64>,
}

pub fn reference_marginals() -> ReferenceMarginals {
    serde_json::from_str(include_str!("../fixtures/reference_error_marginals.json"))
        .expect("bundled marginals fixture parses")
}

impl ReferenceMarginals {
    /// Error profiles assuming independence between type, distance and
    /// position. Used to seed synthetic snapshot drift.
    pub fn independent_profiles(&self) -> ProfileSet {
        let build = |m: &BTreeMap<String, GroupMarginalsPct>| {
            let groups: BTreeMap<String, GroupProfile> = m
                .iter()
                .map(|(g, v)| (g.clone(), GroupProfile::from_marginals(&v.types, &v.distance, &v.position)))
                .collect();
            let pooled = pool_equally(groups.values());
            ErrorProfile { groups, pooled, inherited: Vec::new() }
        };
        ProfileSet {
            forename: build(&self.forename),
            surname: build(&self.surname),
            char_inventory: CharInventory::default(),
        }
    }
}

fn pool_equally<'a, I: Iterator<Item = &'a GroupProfile>>(profiles: I) -> GroupProfile {
    let mut acc: BTreeMap<Cell, f64> = BTreeMap::new();
    let mut n = 0usize;
    for p in profiles {
        n += 1;
        for c in &p.cells {
            *acc.entry(c.cell).or_default() += c.p;
        }
    }
    GroupProfile { cells: acc.into_iter().map(|(cell, p)| CellProbability { cell, p: p / n.max(1) as f64 }).collect() }
}
