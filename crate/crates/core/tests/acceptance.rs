//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line per criterion and exits non-zero if any fails.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use namelink::corruption::{
    apply_corruption, corrupt_dataset, plan_exposure, sample_mechanism, CorruptionSetting, SettingKind,
};
use namelink::evaluation::{aggregate_replicates, calibrate_threshold, strata, stratified_sample, Stratum};
use namelink::linkage::{em_fit, estimate_u, ComparisonVector, EmOptions, ModelFamily, PatternCounts};
use namelink::pipeline::{run_all, synth_corpus, RunConfig, RunReport, SynthSpec};
use namelink::profiler::{classify_edit, reference_marginals, CharInventory};
use namelink::string_metrics::{jaro, jaro_winkler, levenshtein};
use namelink::{Dataset, NameField, PersonRecord, RecordId};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- oracles

/// Full (n+1) x (m+1) matrix edit distance.
fn levenshtein_matrix(a: &[char], b: &[char]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

/// Jaro from its definition: characters match when equal and no further
/// apart than floor(max(|a|,|b|)/2) - 1, each character matching at most
/// once, scanning `a` left to right; t is half the number of matched
/// characters that appear in a different order.
fn jaro_definition(a: &[char], b: &[char]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let window = (a.len().max(b.len()) / 2) as isize - 1;
    let mut used = vec![false; b.len()];
    let mut a_matched = Vec::new();
    let mut b_positions = Vec::new();
    for (i, ca) in a.iter().enumerate() {
        let found = (0..b.len()).find(|&j| !used[j] && b[j] == *ca && (i as isize - j as isize).abs() <= window.max(0));
        if let Some(j) = found {
            used[j] = true;
            a_matched.push(*ca);
            b_positions.push(j);
        }
    }
    let m = a_matched.len() as f64;
    if m == 0.0 {
        return 0.0;
    }
    b_positions.sort_unstable();
    let b_matched: Vec<char> = b_positions.iter().map(|&j| b[j]).collect();
    let t = a_matched.iter().zip(&b_matched).filter(|(x, y)| x != y).count() as f64 / 2.0;
    (m / a.len() as f64 + m / b.len() as f64 + (m - t) / m) / 3.0
}

fn jaro_winkler_definition(a: &[char], b: &[char]) -> f64 {
    let j = jaro_definition(a, b);
    let l = a.iter().zip(b).take(4).take_while(|(x, y)| x == y).count() as f64;
    j + l * 0.1 * (1.0 - j)
}

fn random_name(rng: &mut ChaCha8Rng, alphabet: &[char]) -> Vec<char> {
    let len = rng.gen_range(0..=12);
    (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
}

// ---------------------------------------------------------------- criteria

fn comparator_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // a small alphabet makes matches and transpositions common
    let alphabet: Vec<char> = "ABCDEAEIO".chars().collect();
    let mut lev_mismatch = 0;
    let mut jaro_err: f64 = 0.0;
    let mut jw_err: f64 = 0.0;
    for _ in 0..1000 {
        let a = random_name(&mut rng, &alphabet);
        let b = random_name(&mut rng, &alphabet);
        let (sa, sb): (String, String) = (a.iter().collect(), b.iter().collect());
        lev_mismatch += usize::from(levenshtein(&sa, &sb) != levenshtein_matrix(&a, &b));
        jaro_err = jaro_err.max((jaro(&sa, &sb) - jaro_definition(&a, &b)).abs());
        jw_err = jw_err.max((jaro_winkler(&sa, &sb) - jaro_winkler_definition(&a, &b)).abs());
    }
    let martha = jaro_winkler("MARTHA", "MARHTA");
    let martha_oracle = jaro_winkler_definition(&['M', 'A', 'R', 'T', 'H', 'A'], &['M', 'A', 'R', 'H', 'T', 'A']);
    let elapsed = start.elapsed();
    check(
        lev_mismatch == 0
            && jaro_err <= 1e-12
            && jw_err <= 1e-12
            && (martha - 0.961_111_111_111_111).abs() < 1e-12
            && (martha - martha_oracle).abs() < 1e-12
            && elapsed < Duration::from_secs(5),
        format!(
            "levenshtein mismatches {lev_mismatch}/1000, max |jaro err| {jaro_err:.1e}, max |jw err| {jw_err:.1e}, \
             JW(MARTHA,MARHTA) = {martha:.6}, {elapsed:.2?}"
        ),
    )
}

fn edit_round_trip(corpus: &Dataset) -> Outcome {
    let start = Instant::now();
    let profiles = reference_marginals().independent_profiles();
    let inv = CharInventory::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let names: Vec<&str> = corpus.iter().flat_map(|r| [r.forename.as_str(), r.surname.as_str()]).collect();
    let groups: Vec<&str> = corpus.iter().map(|r| r.group.as_str()).collect();
    let (mut events, mut agree, mut fallbacks) = (0usize, 0usize, 0usize);
    while events < 10_000 {
        let i = rng.gen_range(0..names.len());
        let field = if i % 2 == 0 { NameField::Forename } else { NameField::Surname };
        let cell = sample_mechanism(profiles.field(field), Some(groups[i / 2]), true, &mut rng).unwrap();
        let c = apply_corruption(names[i], cell, &inv, &mut rng);
        if c.fallback {
            fallbacks += 1;
            continue;
        }
        events += 1;
        if classify_edit(names[i], &c.corrupted).ok().map(|e| e.cell()) == Some(cell) {
            agree += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        agree == events && elapsed < Duration::from_secs(30),
        format!(
            "{agree}/{events} events reclassified to their sampled cell ({fallbacks} fallbacks skipped), {elapsed:.2?}"
        ),
    )
}

fn person(id: String, group: &str) -> PersonRecord {
    PersonRecord {
        forename: format!("NAME{}", id.len() % 7),
        surname: "SURNAME".into(),
        id: RecordId(id),
        birth_year: Some(1970),
        gender: "F".into(),
        group: group.into(),
    }
}

fn exposure_exactness(corpus: &Dataset) -> Outcome {
    let profiles = reference_marginals().independent_profiles();
    let mut notes = Vec::new();
    let mut ok = true;

    // Setting 1: overall budget on the synthetic corpus
    let s1 = CorruptionSetting::new(SettingKind::Uniform, 0.10, 1);
    let (_, audit) = corrupt_dataset(corpus, &s1, &profiles).map_err(|e| e.to_string())?;
    for field in NameField::ALL {
        let eligible = corpus.iter().filter(|r| r.is_corruptible(field)).count();
        let realised = audit.exposed(field).count();
        let expected = (0.10 * eligible as f64).round() as usize;
        ok &= realised == expected;
        notes.push(format!("S1 {field} {realised}/{expected}"));
    }

    // Setting 2: per-group budgets
    let s2 = CorruptionSetting::new(SettingKind::EqualExposure, 0.10, 2);
    let (_, audit) = corrupt_dataset(corpus, &s2, &profiles).map_err(|e| e.to_string())?;
    let mut s2_ok = true;
    for field in NameField::ALL {
        let counts = audit.exposure_counts(field);
        let mut eligible: BTreeMap<&str, usize> = BTreeMap::new();
        for r in corpus.iter().filter(|r| r.is_corruptible(field)) {
            *eligible.entry(r.group.as_str()).or_default() += 1;
        }
        for (g, n) in eligible {
            s2_ok &= counts.get(g).copied().unwrap_or(0) == (0.10 * n as f64).round() as usize;
        }
    }
    ok &= s2_ok;
    notes.push(format!("S2 per-group exact: {s2_ok}"));

    // Setting 3: four-group fixture, hand-enumerated.
    // N = 194, budget round(19.4) = 19. Weights 0.10/0.20/0.20/0.15 sum to
    // 0.65, so quotas are 19 * w / 0.65: W 2.923, B 5.846, H 5.846, A 4.385.
    // Floors 2,5,5,4 leave 3 seats: W (.923), then B and H (.846) -> 3,6,6,4.
    // H has only 4 records: excess 2 goes to W,B,A by 0.10:0.20:0.15,
    // quotas .444/.889/.667 -> B and A -> final 3,7,4,5.
    let mut recs = Vec::new();
    for (g, n) in [("W", 100), ("B", 40), ("H", 4), ("A", 50)] {
        recs.extend((0..n).map(|i| person(format!("{g}{i:03}"), g)));
    }
    let fixture = Dataset::new(recs).unwrap();
    let weights: BTreeMap<String, f64> =
        [("W", 0.10), ("B", 0.20), ("H", 0.20), ("A", 0.15)].iter().map(|(g, w)| (g.to_string(), *w)).collect();
    let mut s3 = CorruptionSetting::new(SettingKind::Disproportionate, 0.10, 3).with_weights(weights);
    // the fixture labels have no profile of their own
    s3.pooled_fallback = true;
    let plan = plan_exposure(&s3, &fixture, NameField::Forename).map_err(|e| e.to_string())?;
    let got: Vec<usize> = ["W", "B", "H", "A"].iter().map(|g| plan.targets[*g]).collect();
    let (_, audit) = corrupt_dataset(&fixture, &s3, &profiles).map_err(|e| e.to_string())?;
    let realised = audit.exposure_counts(NameField::Forename);
    let realised: Vec<usize> = ["W", "B", "H", "A"].iter().map(|g| realised.get(*g).copied().unwrap_or(0)).collect();
    ok &= got == vec![3, 7, 4, 5] && realised == got;
    notes.push(format!("S3 fixture plan {got:?}, realised {realised:?}, expected [3, 7, 4, 5]"));
    check(ok, notes.join("; "))
}

fn em_recovery() -> Outcome {
    let start = Instant::now();
    let lambda = 0.3;
    let m = [[0.85, 0.10, 0.05], [0.75, 0.15, 0.10]];
    let u = [[0.05, 0.15, 0.80], [0.10, 0.20, 0.70]];
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let draw = |p: &[f64; 3], rng: &mut ChaCha8Rng| {
        let x: f64 = rng.gen();
        if x < p[0] {
            0u8
        } else if x < p[0] + p[1] {
            1
        } else {
            2
        }
    };
    let mut vectors = Vec::with_capacity(50_000);
    for _ in 0..50_000 {
        let p = if rng.gen_bool(lambda) { &m } else { &u };
        vectors.push(ComparisonVector::new(&[Some(draw(&p[0], &mut rng)), Some(draw(&p[1], &mut rng))]));
    }
    // u comes from a separate sample of non-matching pairs, as in the pipeline
    let random: Vec<ComparisonVector> = (0..100_000)
        .map(|_| ComparisonVector::new(&[Some(draw(&u[0], &mut rng)), Some(draw(&u[1], &mut rng))]))
        .collect();
    let u_hat = estimate_u(&PatternCounts::from_vectors(2, random), &[3, 3]);
    let init = vec![vec![0.6, 0.3, 0.1]; 2];
    let opts = EmOptions::default();
    let fit = em_fit(&PatternCounts::from_vectors(2, vectors.clone()), init.clone(), u_hat.clone(), &opts);

    let mut err: f64 = (fit.lambda - lambda).abs();
    for c in 0..2 {
        for l in 0..3 {
            err = err.max((fit.m[c][l] - m[c][l]).abs()).max((fit.u[c][l] - u[c][l]).abs());
        }
    }
    let mut shuffled = vectors;
    for i in (1..shuffled.len()).rev() {
        let j = rng.gen_range(0..=i);
        shuffled.swap(i, j);
    }
    let refit = em_fit(&PatternCounts::from_vectors(2, shuffled), init, u_hat, &opts);
    let invariant = refit == fit;
    let elapsed = start.elapsed();
    check(
        err <= 0.02 && invariant && fit.converged && elapsed < Duration::from_secs(60),
        format!(
            "lambda {:.4}, max abs error {err:.4}, permutation invariant {invariant}, converged {}, {elapsed:.2?}",
            fit.lambda, fit.converged
        ),
    )
}

fn calibration_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..60);
        let weights: Vec<Option<f64>> = (0..n)
            .map(|_| if rng.gen_bool(0.15) { None } else { Some(f64::from(rng.gen_range(-20i32..20)) / 2.0) })
            .collect();
        let got = calibrate_threshold(&weights, 0.20).map_err(|e| e.to_string())?;
        // exhaustive: every threshold that can change a decision, plus both infinities
        let mut ts: Vec<f64> = weights.iter().flatten().copied().collect();
        ts.extend([f64::NEG_INFINITY, f64::INFINITY]);
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let mmr = |t: f64| weights.iter().filter(|w| !matches!(w, Some(x) if *x >= t)).count() as f64 / n as f64;
        let best_gap = ts.iter().map(|&t| (mmr(t) - 0.20).abs()).fold(f64::INFINITY, f64::min);
        let expected = ts.iter().copied().find(|&t| (mmr(t) - 0.20).abs() == best_gap).unwrap();
        // thresholds between the candidates never do strictly better
        let between_ok = ts.windows(2).all(|w| {
            let mid = if w[0].is_finite() && w[1].is_finite() { (w[0] + w[1]) / 2.0 } else { return true };
            (mmr(mid) - 0.20).abs() >= best_gap
        });
        if got.threshold != expected || (got.mmr - mmr(expected)).abs() > 1e-15 || !between_ok {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{mismatches}/1000 weight sets disagree with the exhaustive optimum"))
}

fn stratified_sampling(corpus: &Dataset) -> Outcome {
    let profiles = reference_marginals().independent_profiles();
    let mut setting = CorruptionSetting::new(SettingKind::Disproportionate, 0.10, 15);
    setting.group_weights = Some(RunConfig::default().setting3_weights);
    let (corrupted, audit) = corrupt_dataset(corpus, &setting, &profiles).map_err(|e| e.to_string())?;
    let st = strata(corrupted.records(), &audit);
    let n = st.len() as f64;
    let mut population: HashMap<&Stratum, usize> = HashMap::new();
    for s in &st {
        *population.entry(s).or_default() += 1;
    }
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let idx = stratified_sample(corrupted.records(), &st, 0.05, seed).map_err(|e| e.to_string())?;
        let mut counts: HashMap<&Stratum, usize> = HashMap::new();
        for &i in &idx {
            *counts.entry(&st[i]).or_default() += 1;
        }
        for (s, &p) in &population {
            let sample_share = counts.get(s).copied().unwrap_or(0) as f64 / idx.len() as f64;
            worst = worst.max((sample_share - p as f64 / n).abs() * 100.0);
        }
    }
    check(worst <= 0.5, format!("{} strata, worst share deviation {worst:.4} pp over 100 seeds", population.len()))
}

fn directional(report: &RunReport, elapsed: Duration, replicates: usize) -> Outcome {
    let hispanic = "Hispanic (White or Black)";
    let fmr =
        |m: ModelFamily, s: SettingKind, r: usize| report.cell(m, s).unwrap().replicates[r].overall.fmr().unwrap();
    let disparity = |m: ModelFamily, r: usize| {
        report.cell(m, SettingKind::Disproportionate).unwrap().replicates[r]
            .group(hispanic)
            .unwrap()
            .mmr_disparity_pp
            .unwrap()
    };
    let count = |f: &dyn Fn(usize) -> bool| (0..replicates).filter(|&r| f(r)).count();
    let mut lines = Vec::new();
    let mut ok = true;
    let families = [(ModelFamily::Jw, ModelFamily::JwNoTf), (ModelFamily::Levenshtein, ModelFamily::LevenshteinNoTf)];

    for s in [SettingKind::Uniform, SettingKind::EqualExposure] {
        for (tf, no_tf) in families {
            let k = count(&|r| fmr(no_tf, s, r) > fmr(tf, s, r));
            ok &= k >= 4;
            lines.push(format!("(a) {} FMR {no_tf} > {tf}: {k}/{replicates}", s.label()));
        }
    }
    for (tf, no_tf) in families {
        let k = count(&|r| {
            disparity(no_tf, r) > disparity(tf, r) && disparity(tf, r) > disparity(ModelFamily::Combined, r)
        });
        ok &= k >= 4;
        let mean = |m| (0..replicates).map(|r| disparity(m, r)).sum::<f64>() / replicates as f64;
        lines.push(format!(
            "(b) setting3 {hispanic} MMR disparity {no_tf} > {tf} > combined: {k}/{replicates} (means {:+.1} / {:+.1} / {:+.1} pp)",
            mean(no_tf),
            mean(tf),
            mean(ModelFamily::Combined)
        ));
    }
    for s in SettingKind::ALL {
        let k = count(&|r| fmr(ModelFamily::Combined, s, r) > fmr(ModelFamily::Jw, s, r));
        ok &= k >= 4;
        lines.push(format!("(c) {} FMR combined > jw: {k}/{replicates}", s.label()));
    }
    ok &= elapsed < Duration::from_secs(600);
    lines.push(format!("full run {elapsed:.1?}"));
    check(ok, lines.join("\n         "))
}

fn aggregation() -> Outcome {
    let s = aggregate_replicates(&[1.0, 2.0, 3.0, 4.0, 5.0]).map_err(|e| e.to_string())?;
    check(
        (s.mean - 3.0).abs() < 1e-12 && (s.half_width - 1.9626).abs() <= 1e-4,
        format!("mean {:.6}, half-width {:.6} (expected 3 and 1.9626 +/- 1e-4)", s.mean, s.half_width),
    )
}

/// Report files by name. The manifest records where it was written, which
/// necessarily differs between the two runs, so that one line is dropped.
fn read_reports(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        let mut bytes = fs::read(&p).unwrap();
        if name == "manifest.json" {
            let text = String::from_utf8(bytes).unwrap();
            bytes = text
                .lines()
                .filter(|l| !l.trim_start().starts_with("\"output_dir\""))
                .collect::<Vec<_>>()
                .join("\n")
                .into_bytes();
        }
        files.insert(name, bytes);
    }
    files
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    let a = read_reports(first);
    let b = read_reports(second);
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    check(
        a.keys().eq(b.keys()) && differing.is_empty() && a.contains_key("overall.csv"),
        format!("{} report files compared, differing: {differing:?}", a.len()),
    )
}

// ---------------------------------------------------------------- driver

fn main() {
    let corpus = synth_corpus(&SynthSpec::desk_scale(50_000, 2022)).expect("synthetic corpus");
    let tmp = tempfile::tempdir().expect("tempdir");
    let full = |dir: &str| RunConfig {
        master_seed: Some(20_221_001),
        output_dir: tmp.path().join(dir),
        ..RunConfig::default()
    };

    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(o) => o,
            Err(p) => Err(format!(
                "panicked: {}",
                p.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default()
            )),
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} {name}: {detail}");
        results.push((name, outcome));
    };

    run("comparator_oracles", &mut comparator_oracles);
    run("edit_round_trip", &mut || edit_round_trip(&corpus));
    run("exposure_exactness", &mut || exposure_exactness(&corpus));
    run("em_recovery", &mut em_recovery);
    run("threshold_calibration", &mut calibration_brute_force);
    run("stratified_sampling", &mut || stratified_sampling(&corpus));

    let cfg_a = full("run_a");
    let start = Instant::now();
    let first = run_all(&cfg_a);
    let elapsed = start.elapsed();
    run("directional_reproduction", &mut || {
        let report = first.as_ref().map_err(|e| e.to_string())?;
        directional(report, elapsed, cfg_a.replicates)
    });
    run("replicate_aggregation", &mut aggregation);
    let cfg_b = full("run_b");
    run("determinism", &mut || {
        run_all(&cfg_b).map_err(|e| e.to_string())?;
        determinism(&cfg_a.output_dir, &cfg_b.output_dir)
    });

    let failed: Vec<&str> = results.iter().filter(|r| r.1.is_err()).map(|r| r.0).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
