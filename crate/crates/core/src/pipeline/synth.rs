//! Deterministic synthetic voter-style corpora.
//!
//! Each group draws forenames and surnames from its own procedurally built
//! pool, with Zipf-distributed frequencies so that common names are common
//! enough for term-frequency effects and same-name collisions to matter.
//! Group pools differ in syllable inventory and structure (length, vowel
//! density, multi-term and punctuated names).

use std::collections::{BTreeMap, HashSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corruption::{apply_corruption, largest_remainder, sample_mechanism};
use crate::error::{Error, Result};
use crate::profiler::{reference_marginals, CharInventory};
use crate::record::{Dataset, NameField, PersonRecord, RecordId};
use crate::rng::StreamKey;

/// The eight group labels with their default population shares.
pub const GROUP_SHARES: [(&str, f64); 8] = [
    ("Non-Hispanic White", 0.62),
    ("Non-Hispanic Black", 0.20),
    ("Hispanic (White or Black)", 0.05),
    ("Asian", 0.025),
    ("Other", 0.03),
    ("Mixed", 0.01),
    ("Indigenous or Pacific Islander", 0.01),
    ("Unknown", 0.055),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum Style {
    Anglo,
    Black,
    Hispanic,
    Asian,
    Pacific,
}

struct Morphology {
    onsets: &'static [&'static str],
    vowels: &'static [&'static str],
    codas: &'static [&'static str],
    p_coda: f64,
    forename_syllables: (usize, usize),
    surname_syllables: (usize, usize),
    forename_endings: &'static [&'static str],
    surname_endings: &'static [&'static str],
    p_two_terms: f64,
    p_hyphen: f64,
    p_apostrophe: f64,
}

fn morphology(style: Style) -> Morphology {
    match style {
        Style::Anglo => Morphology {
            onsets: &[
                "B", "C", "D", "F", "G", "H", "J", "K", "L", "M", "N", "P", "R", "S", "T", "W", "BR", "CH", "CL", "GR",
                "ST", "TH", "SH",
            ],
            vowels: &["A", "E", "I", "O", "U", "EA", "OU", "Y"],
            codas: &["N", "R", "L", "S", "T", "RD", "NN", "LL", "TH", "CK", "RT", "M"],
            p_coda: 0.7,
            forename_syllables: (1, 2),
            surname_syllables: (1, 2),
            forename_endings: &["", "", "", "IE", "Y", "ETTE", "ERT"],
            surname_endings: &["", "SON", "ER", "TON", "MAN", "LEY", "S", "FORD"],
            p_two_terms: 0.03,
            p_hyphen: 0.01,
            p_apostrophe: 0.01,
        },
        Style::Black => Morphology {
            onsets: &["LA", "DE", "SHA", "KE", "TA", "JA", "DA", "MA", "R", "N", "T", "Q", "K", "Z", "D"],
            vowels: &["A", "E", "I", "O", "U", "IA", "EE", "AI"],
            codas: &["N", "R", "L", "SH", "Q", "Z", "Y"],
            p_coda: 0.4,
            forename_syllables: (2, 3),
            surname_syllables: (1, 2),
            forename_endings: &["", "ISHA", "ONTE", "ARIUS", "IQUE", "ELL", "ANA", "ON"],
            surname_endings: &["", "SON", "ER", "S", "INS", "WELL"],
            p_two_terms: 0.04,
            p_hyphen: 0.03,
            p_apostrophe: 0.03,
        },
        Style::Hispanic => Morphology {
            onsets: &["B", "C", "D", "F", "G", "J", "L", "M", "N", "P", "R", "S", "T", "V", "GU", "CR", "LL"],
            vowels: &["A", "E", "I", "O", "U", "IA", "UE", "IO"],
            codas: &["N", "R", "L", "S"],
            p_coda: 0.3,
            forename_syllables: (2, 3),
            surname_syllables: (2, 3),
            forename_endings: &["", "O", "A", "ITO", "ELA", "ANA"],
            surname_endings: &["EZ", "ES", "ERO", "ADO", "", "IA"],
            p_two_terms: 0.25,
            p_hyphen: 0.08,
            p_apostrophe: 0.0,
        },
        Style::Asian => Morphology {
            onsets: &["B", "CH", "D", "H", "J", "K", "L", "M", "N", "P", "S", "T", "W", "X", "Y", "Z", "ZH", "NG"],
            vowels: &["A", "E", "I", "O", "U", "AI", "AO", "EI", "UO", "IA", "UY"],
            codas: &["N", "NG"],
            p_coda: 0.45,
            forename_syllables: (1, 2),
            surname_syllables: (1, 1),
            forename_endings: &[""],
            surname_endings: &["", "", "", "EN", "YEN"],
            p_two_terms: 0.3,
            p_hyphen: 0.02,
            p_apostrophe: 0.0,
        },
        Style::Pacific => Morphology {
            onsets: &["H", "K", "L", "M", "N", "P", "W", "", "M", "K"],
            vowels: &["A", "E", "I", "O", "U", "AI", "AU", "EI", "OA"],
            codas: &[""],
            p_coda: 0.0,
            forename_syllables: (2, 4),
            surname_syllables: (3, 4),
            forename_endings: &["", "NI", "LANI", "LOHA"],
            surname_endings: &["", "", "KAI", "LANI"],
            p_two_terms: 0.05,
            p_hyphen: 0.02,
            p_apostrophe: 0.12,
        },
    }
}

/// Styles a group draws names from, with weights.
fn group_styles(group: &str) -> Vec<(Style, f64)> {
    use Style::*;
    match group {
        "Non-Hispanic White" => vec![(Anglo, 1.0)],
        "Non-Hispanic Black" => vec![(Black, 0.6), (Anglo, 0.4)],
        "Hispanic (White or Black)" => vec![(Hispanic, 1.0)],
        "Asian" => vec![(Asian, 1.0)],
        "Indigenous or Pacific Islander" => vec![(Pacific, 0.7), (Anglo, 0.3)],
        "Mixed" => vec![(Anglo, 0.4), (Black, 0.3), (Hispanic, 0.2), (Asian, 0.1)],
        "Other" => vec![(Asian, 0.4), (Hispanic, 0.3), (Anglo, 0.3)],
        _ => vec![(Anglo, 0.5), (Black, 0.2), (Hispanic, 0.15), (Asian, 0.1), (Pacific, 0.05)],
    }
}

fn pick<'a, R: Rng>(xs: &[&'a str], rng: &mut R) -> &'a str {
    xs.choose(rng).copied().unwrap_or("")
}

fn one_term<R: Rng>(m: &Morphology, syllables: (usize, usize), endings: &[&str], rng: &mut R) -> String {
    let n = rng.gen_range(syllables.0..=syllables.1);
    let mut s = String::new();
    for _ in 0..n {
        s.push_str(pick(m.onsets, rng));
        s.push_str(pick(m.vowels, rng));
        if rng.gen_bool(m.p_coda) {
            s.push_str(pick(m.codas, rng));
        }
    }
    s.push_str(pick(endings, rng));
    s
}

fn generate_name<R: Rng>(m: &Morphology, field: NameField, rng: &mut R) -> String {
    let (syl, endings) = match field {
        NameField::Forename => (m.forename_syllables, m.forename_endings),
        NameField::Surname => (m.surname_syllables, m.surname_endings),
    };
    let mut name = one_term(m, syl, endings, rng);
    if rng.gen_bool(m.p_apostrophe) {
        let prefix = if field == NameField::Surname { "O'" } else { "D'" };
        name = match m.onsets.first() {
            Some(_) if rng.gen_bool(0.5) => format!("{prefix}{name}"),
            _ => {
                let cut = name.char_indices().nth(name.chars().count() / 2).map_or(name.len(), |c| c.0);
                format!("{}'{}", &name[..cut], &name[cut..])
            }
        };
    } else if rng.gen_bool(m.p_hyphen) {
        name = format!("{name}-{}", one_term(m, (1, 2), endings, rng));
    } else if field == NameField::Forename && rng.gen_bool(m.p_two_terms) {
        name = format!("{name} {}", one_term(m, (1, 2), endings, rng));
    }
    name
}

/// `k` distinct names for a group and field, in rank order.
pub fn name_pool(group: &str, field: NameField, k: usize, seed: u64) -> Vec<String> {
    let styles = group_styles(group);
    let style_ix = WeightedIndex::new(styles.iter().map(|s| s.1)).expect("positive style weights");
    let mut rng = StreamKey::new(seed).with_str("pool").with_str(group).with_str(field.as_str()).rng();
    let mut seen = HashSet::with_capacity(k);
    let mut out = Vec::with_capacity(k);
    let mut attempts = 0usize;
    while out.len() < k && attempts < 200 * k {
        attempts += 1;
        let m = morphology(styles[style_ix.sample(&mut rng)].0);
        let name = generate_name(&m, field, &mut rng);
        if name.chars().count() >= 2 && seen.insert(name.clone()) {
            out.push(name);
        }
    }
    out
}

/// Normalised Zipf weights `1 / rank^s` over `k` ranks.
pub fn zipf_weights(k: usize, s: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=k).map(|r| (r as f64).powf(-s)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub size: usize,
    pub zipf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub sizes: BTreeMap<String, usize>,
    pub forenames: PoolSpec,
    pub surnames: PoolSpec,
    /// Per-group replacements for the (forename, surname) pools.
    #[serde(default)]
    pub group_pools: BTreeMap<String, (PoolSpec, PoolSpec)>,
    pub birth_years: (i32, i32),
    pub seed: u64,
}

impl SynthSpec {
    /// Eight groups in default proportions, `n` records in total.
    pub fn desk_scale(n: usize, seed: u64) -> Self {
        let shares: BTreeMap<String, f64> = GROUP_SHARES.iter().map(|(g, s)| (g.to_string(), *s)).collect();
        SynthSpec {
            sizes: largest_remainder(n, &shares),
            forenames: PoolSpec { size: 400, zipf: 1.0 },
            surnames: PoolSpec { size: 2000, zipf: 0.8 },
            group_pools: BTreeMap::new(),
            birth_years: (1930, 2004),
            seed,
        }
    }
}

/// Build the corpus. Ids are zero-padded so that string order equals
/// numeric order; group membership is shuffled across ids.
pub fn synth_corpus(spec: &SynthSpec) -> Result<Dataset> {
    if spec.birth_years.0 > spec.birth_years.1 {
        return Err(Error::Config("birth year range is empty".into()));
    }
    struct Pools {
        forenames: Vec<String>,
        forename_ix: WeightedIndex<f64>,
        surnames: Vec<String>,
        surname_ix: WeightedIndex<f64>,
    }
    let mut pools: BTreeMap<&str, Pools> = BTreeMap::new();
    for g in spec.sizes.keys() {
        let (fp, sp) = match spec.group_pools.get(g) {
            Some((f, s)) => (f, s),
            None => (&spec.forenames, &spec.surnames),
        };
        let forenames = name_pool(g, NameField::Forename, fp.size, spec.seed);
        let surnames = name_pool(g, NameField::Surname, sp.size, spec.seed);
        if forenames.is_empty() || surnames.is_empty() {
            return Err(Error::Config(format!("could not build a name pool for {g:?}")));
        }
        let forename_ix = WeightedIndex::new(zipf_weights(forenames.len(), fp.zipf)).unwrap();
        let surname_ix = WeightedIndex::new(zipf_weights(surnames.len(), sp.zipf)).unwrap();
        pools.insert(g, Pools { forenames, forename_ix, surnames, surname_ix });
    }

    let mut labels: Vec<&str> = spec.sizes.iter().flat_map(|(g, &n)| std::iter::repeat_n(g.as_str(), n)).collect();
    labels.shuffle(&mut StreamKey::new(spec.seed).with_str("group_order").rng());
    let width = labels.len().max(1).to_string().len().max(6);

    let records: Vec<PersonRecord> = labels
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let mut rng: ChaCha8Rng = StreamKey::new(spec.seed).with_str("person").with_u64(i as u64).rng();
            let p = &pools[g];
            PersonRecord {
                id: RecordId(format!("P{:0width$}", i + 1)),
                forename: p.forenames[p.forename_ix.sample(&mut rng)].clone(),
                surname: p.surnames[p.surname_ix.sample(&mut rng)].clone(),
                birth_year: Some(rng.gen_range(spec.birth_years.0..=spec.birth_years.1)),
                gender: if rng.gen_bool(0.5) { "F" } else { "M" }.to_string(),
                group: g.to_string(),
            }
        })
        .collect();
    Dataset::new(records)
}

/// A later snapshot of `base`: each name independently drifts with
/// probability `rate`. A drifting forename of five or more letters becomes a
/// short form (its first 3..len-2 letters) with probability `short_form_share`;
/// every other drift follows the bundled reference error marginals of the
/// record's group.
pub fn drift_snapshot(base: &Dataset, rate: f64, short_form_share: f64, seed: u64) -> Result<Dataset> {
    let profiles = reference_marginals().independent_profiles();
    let inv = CharInventory::default();
    let records: Result<Vec<PersonRecord>> = base
        .records()
        .par_iter()
        .map(|r| {
            let mut out = r.clone();
            for field in NameField::ALL {
                let mut rng = StreamKey::new(seed).with_str("drift").with_str(field.as_str()).with_str(&r.id.0).rng();
                if !r.is_corruptible(field) || !rng.gen_bool(rate) {
                    continue;
                }
                let name = r.name(field);
                let len = name.chars().count();
                if field == NameField::Forename && len >= 5 && rng.gen_bool(short_form_share) {
                    let keep = rng.gen_range(3..=len - 2);
                    *out.name_mut(field) = name.chars().take(keep).collect();
                    continue;
                }
                let cell = sample_mechanism(profiles.field(field), Some(&r.group), true, &mut rng)?;
                *out.name_mut(field) = apply_corruption(name, cell, &inv, &mut rng).corrupted;
            }
            Ok(out)
        })
        .collect();
    Dataset::new(records?)
}
