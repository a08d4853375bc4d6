//! End-to-end orchestration: profile, embed, corrupt, fit, calibrate, link,
//! evaluate and report.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::ingest::ingest;
use super::synth::{drift_snapshot, synth_corpus, SynthSpec};
use crate::corruption::{corrupt_dataset, CorruptionSetting, SettingKind};
use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate_replicates, calibrate_from_best, classify_outcomes, mmr_curve, rates_and_disparities, strata,
    stratified_sample, Calibration, RateReport, Stratum,
};
use crate::linkage::link::format_threshold;
use crate::linkage::{
    block, decide, default_rules, fit_model, score_best, BestCandidate, Candidates, ComparisonSpec, EmbeddingSupport,
    FitOptions, LinkageModel, ModelFamily, TfTables,
};
use crate::name_features::{
    extract_features, fit_component_thresholds, fit_embedding, fit_thresholds, CorpusStats, EmbeddingDocument,
};
use crate::profiler::{pair_snapshots, ProfileSet};
use crate::record::{Dataset, NameField, PersonRecord, RecordId};
use crate::rng::StreamKey;

/// Outputs of error profiling and forename embedding.
#[derive(Debug, Clone)]
pub struct Stage1 {
    pub profiles: ProfileSet,
    pub embedding: EmbeddingDocument,
    pub stats: CorpusStats,
    pub n_discrepancies: usize,
}

/// Profile within-person discrepancies between two snapshots and fit the
/// forename embedding on `base`.
pub fn stage1(snap_a: &Dataset, snap_b: &Dataset, base: &Dataset, per_component: bool) -> Result<Stage1> {
    let discrepancies = pair_snapshots(snap_a.records(), snap_b.records())?;
    let group_of: HashMap<RecordId, String> = snap_a.iter().map(|r| (r.id.clone(), r.group.clone())).collect();
    let profiles = ProfileSet::from_discrepancies(&discrepancies, &group_of, &base.groups())?;

    let stats = CorpusStats::from_names(base.iter().map(|r| r.forename.as_str()));
    let features: Vec<_> = base
        .iter()
        .filter(|r| !r.forename.is_empty())
        .filter_map(|r| extract_features(&r.forename, &stats).ok())
        .collect();
    let model = fit_embedding(&features)?;
    let pairs: Vec<(String, String)> = discrepancies
        .iter()
        .filter(|d| d.field == NameField::Forename)
        .map(|d| (d.value_a.clone(), d.value_b.clone()))
        .collect();
    let thresholds = fit_thresholds(&pairs, &model, &stats)?;
    let component_thresholds =
        if per_component { Some(fit_component_thresholds(&pairs, &model, &stats)?) } else { None };
    Ok(Stage1 {
        profiles,
        embedding: EmbeddingDocument { model, thresholds, component_thresholds },
        stats,
        n_discrepancies: discrepancies.len(),
    })
}

/// Seeds derived from the master seed, all recorded in the manifest.
#[derive(Debug, Clone, Copy)]
pub struct Seeds(pub u64);

impl Seeds {
    fn key(self, label: &str) -> StreamKey {
        StreamKey::new(self.0).with_str(label)
    }
    pub fn synth(self) -> u64 {
        self.key("synth").value()
    }
    pub fn drift(self) -> u64 {
        self.key("drift").value()
    }
    pub fn corruption(self, s: SettingKind, replicate: usize) -> u64 {
        self.key("corrupt").with_str(s.as_str()).with_u64(replicate as u64).value()
    }
    pub fn sample(self, s: SettingKind, replicate: usize) -> u64 {
        self.key("sample").with_str(s.as_str()).with_u64(replicate as u64).value()
    }
    pub fn u_pairs(self, m: ModelFamily, s: SettingKind) -> u64 {
        self.key("u_pairs").with_str(m.as_str()).with_str(s.as_str()).value()
    }
}

/// Everything produced by one corrupted replicate that linkage needs.
struct Replicate {
    setting: SettingKind,
    replicate: usize,
    corruption_seed: u64,
    sample_seed: u64,
    left: Vec<PersonRecord>,
    strata: HashMap<RecordId, Stratum>,
    candidates: Candidates,
    exposure: Vec<ExposureRow>,
    fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureRow {
    pub setting: String,
    pub replicate: usize,
    pub field: NameField,
    pub group: String,
    pub eligible: usize,
    pub exposed: usize,
}

/// Results of one (model, setting) pair across replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub model: ModelFamily,
    pub setting: SettingKind,
    pub calibration: Calibration,
    pub fitted: LinkageModel,
    pub replicates: Vec<RateReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSeeds {
    pub setting: String,
    pub replicate: usize,
    pub corruption_seed: u64,
    pub sample_seed: u64,
    pub evaluation_records: usize,
    pub candidate_pairs: usize,
    pub fallback_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub model: String,
    pub setting: String,
    pub threshold: String,
    pub calibration_mmr: f64,
    pub lambda: f64,
    pub em_converged: bool,
    pub em_iterations: usize,
    pub u_pairs_seed: u64,
    pub parameters: LinkageModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: String,
    pub error: Option<String>,
    pub stages_completed: Vec<String>,
    pub config_hash: String,
    pub config: RunConfig,
    pub master_seed: u64,
    pub synth_seed: Option<u64>,
    pub drift_seed: Option<u64>,
    pub base_records: usize,
    pub discrepancies: usize,
    pub embedding_explained_variance: Vec<f64>,
    pub embedding_cuts: Vec<f64>,
    pub replicates: Vec<ReplicateSeeds>,
    pub models: Vec<ModelEntry>,
    pub decisions: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub cells: Vec<CellResult>,
    pub exposure: Vec<ExposureRow>,
    pub curves: Vec<(ModelFamily, SettingKind, Vec<(f64, f64, f64)>)>,
    pub manifest: Manifest,
}

impl RunReport {
    pub fn cell(&self, m: ModelFamily, s: SettingKind) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.model == m && c.setting == s)
    }
}

fn decision_defaults() -> BTreeMap<String, String> {
    [
        ("blocking", "year+gender+surname+forename[0..3] OR year+gender+forename[0..3]"),
        ("u_estimation", "random left/right pairs with distinct ids, floored at 1e-9, held fixed in EM"),
        ("em_init", "lambda = left records with candidates / blocked pairs; m geometric by level"),
        ("tf", "exact-level u replaced by max(tf(value), 1/(10N)) on the original extract"),
        ("fit", "parameters fitted on replicate 1 of each setting and reused"),
        ("calibration", "threshold per model and setting on replicate 1, ties to the lower threshold"),
        ("link_ties", "equal best weights resolved to the smaller right id"),
        ("ci", "mean +/- t(0.975, k-1) * sd / sqrt(k)"),
        ("position_rule", "index / max(len(target)-1, 1); start/end checked before halves"),
        ("seven_plus", "bucket 7+ realised as exactly 7 edits"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// Load or synthesise the base extract and the profiling snapshot pair.
pub fn load_inputs(cfg: &RunConfig, seeds: Seeds) -> Result<(Dataset, Dataset, Dataset, Option<u64>, Option<u64>)> {
    match (&cfg.snapshot_a, &cfg.snapshot_b) {
        (Some(a), Some(b)) => {
            let a = ingest(a)?;
            let b = ingest(b)?;
            let base = match &cfg.base {
                Some(p) => ingest(p)?,
                None => b.clone(),
            };
            Ok((a, b, base, None, None))
        }
        _ => {
            let spec = SynthSpec::desk_scale(cfg.synth_size, seeds.synth());
            let a = synth_corpus(&spec)?;
            let b = drift_snapshot(&a, cfg.synth_drift_rate, cfg.synth_short_form_share, seeds.drift())?;
            // the earlier snapshot is the extract that gets corrupted
            Ok((a.clone(), b, a, Some(seeds.synth()), Some(seeds.drift())))
        }
    }
}

fn corruption_setting(cfg: &RunConfig, kind: SettingKind, seed: u64) -> CorruptionSetting {
    let mut s = CorruptionSetting::new(kind, cfg.overall_rate, seed);
    if kind == SettingKind::Disproportionate {
        s.group_weights = Some(cfg.setting3_weights.clone());
    }
    s.pooled_fallback = cfg.pooled_fallback;
    s
}

fn build_replicate(
    cfg: &RunConfig,
    seeds: Seeds,
    base: &Dataset,
    profiles: &ProfileSet,
    setting: SettingKind,
    replicate: usize,
) -> Result<Replicate> {
    let corruption_seed = seeds.corruption(setting, replicate);
    let sample_seed = seeds.sample(setting, replicate);
    let cs = corruption_setting(cfg, setting, corruption_seed);
    let (corrupted, audit) = corrupt_dataset(base, &cs, profiles)?;
    let st = strata(corrupted.records(), &audit);
    let chosen = stratified_sample(corrupted.records(), &st, cfg.sample_fraction, sample_seed)?;
    let left: Vec<PersonRecord> = chosen.iter().map(|&i| corrupted.get(i).clone()).collect();
    let strata_map: HashMap<RecordId, Stratum> =
        chosen.iter().map(|&i| (corrupted.get(i).id.clone(), st[i].clone())).collect();
    let candidates = block(&left, base, &default_rules());

    let mut exposure = Vec::new();
    for field in NameField::ALL {
        let exposed = audit.exposure_counts(field);
        let mut eligible: BTreeMap<String, usize> = BTreeMap::new();
        for r in base.iter() {
            *eligible.entry(r.group.clone()).or_insert(0) += usize::from(r.is_corruptible(field));
        }
        for (g, n) in eligible {
            exposure.push(ExposureRow {
                setting: setting.label().to_string(),
                replicate,
                field,
                exposed: exposed.get(&g).copied().unwrap_or(0),
                group: g,
                eligible: n,
            });
        }
    }
    Ok(Replicate {
        setting,
        replicate,
        corruption_seed,
        sample_seed,
        left,
        strata: strata_map,
        candidates,
        exposure,
        fallbacks: audit.rows.iter().filter(|r| r.fallback).count(),
    })
}

/// Run the experiment and return the in-memory report without writing files.
pub fn execute(cfg: &RunConfig, progress: &mut Vec<String>) -> Result<RunReport> {
    cfg.validate()?;
    let master = cfg.master_seed.ok_or_else(|| Error::Config("a master seed is required".into()))?;
    let seeds = Seeds(master);

    let (snap_a, snap_b, base, synth_seed, drift_seed) = load_inputs(cfg, seeds)?;
    progress.push("inputs".into());
    info!("base extract: {} records", base.len());

    let s1 = stage1(&snap_a, &snap_b, &base, cfg.levels.per_component)?;
    progress.push("profile".into());
    progress.push("embedding".into());

    let tasks: Vec<(SettingKind, usize)> =
        cfg.settings.iter().flat_map(|&s| (1..=cfg.replicates).map(move |r| (s, r))).collect();
    let replicates: Vec<Replicate> = tasks
        .par_iter()
        .map(|&(s, r)| build_replicate(cfg, seeds, &base, &s1.profiles, s, r))
        .collect::<Result<_>>()?;
    progress.push("corruption".into());

    let tf = TfTables::from_dataset(&base);
    let support = if cfg.models.iter().any(|m| m.needs_embedding()) {
        let mut sup = EmbeddingSupport::new(s1.embedding.clone(), s1.stats.clone());
        sup.warm(base.iter().chain(replicates.iter().flat_map(|r| r.left.iter())));
        Some(sup)
    } else {
        None
    };

    let rep_index: HashMap<(SettingKind, usize), &Replicate> =
        replicates.iter().map(|r| ((r.setting, r.replicate), r)).collect();
    let model_tasks: Vec<(ModelFamily, SettingKind)> =
        cfg.models.iter().flat_map(|&m| cfg.settings.iter().map(move |&s| (m, s))).collect();

    let fitted: Vec<LinkageModel> = model_tasks
        .par_iter()
        .map(|&(m, s)| {
            let rep1 = rep_index[&(s, 1)];
            let spec = ComparisonSpec::for_family(m, &cfg.levels);
            let opts = FitOptions { em: cfg.em.clone(), u_pairs: cfg.u_pairs, seed: seeds.u_pairs(m, s) };
            fit_model(m, spec, &rep1.left, &base, &rep1.candidates, support.as_ref(), &opts)
        })
        .collect::<Result<_>>()?;
    progress.push("fit".into());

    let groups = base.groups();
    let score_tasks: Vec<(usize, usize)> =
        (0..model_tasks.len()).flat_map(|i| (1..=cfg.replicates).map(move |r| (i, r))).collect();
    let scored: Vec<Vec<BestCandidate>> = score_tasks
        .par_iter()
        .map(|&(i, r)| {
            let (m, s) = model_tasks[i];
            let rep = rep_index[&(s, r)];
            let tf_ref = fitted[i].uses_tf().then_some(&tf);
            let _ = m;
            score_best(&rep.left, &base, &rep.candidates, &fitted[i], tf_ref, support.as_ref())
        })
        .collect();
    progress.push("scoring".into());

    let mut cells = Vec::with_capacity(model_tasks.len());
    let mut curves = Vec::new();
    for (i, &(m, s)) in model_tasks.iter().enumerate() {
        let best_of = |r: usize| &scored[i * cfg.replicates + (r - 1)];
        let calibration = calibrate_from_best(best_of(1), cfg.target_mmr)?;
        let mut reports = Vec::with_capacity(cfg.replicates);
        for r in 1..=cfg.replicates {
            let rep = rep_index[&(s, r)];
            let decisions = decide(best_of(r), calibration.threshold);
            let counts = classify_outcomes(&decisions, &rep.strata, |id| Some(id.clone()))?;
            reports.push(rates_and_disparities(&counts, &groups, &cfg.reference_group)?);
        }
        curves.push((m, s, threshold_curve(best_of(1))));
        cells.push(CellResult { model: m, setting: s, calibration, fitted: fitted[i].clone(), replicates: reports });
    }
    progress.push("evaluation".into());

    let manifest = Manifest {
        status: "ok".into(),
        error: None,
        stages_completed: progress.clone(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        master_seed: master,
        synth_seed,
        drift_seed,
        base_records: base.len(),
        discrepancies: s1.n_discrepancies,
        embedding_explained_variance: s1.embedding.model.explained_variance.clone(),
        embedding_cuts: {
            let t = s1.embedding.thresholds;
            vec![t.cut_p5, t.cut_p10, t.cut_p25, t.cut_p50]
        },
        replicates: replicates
            .iter()
            .map(|r| ReplicateSeeds {
                setting: r.setting.label().into(),
                replicate: r.replicate,
                corruption_seed: r.corruption_seed,
                sample_seed: r.sample_seed,
                evaluation_records: r.left.len(),
                candidate_pairs: r.candidates.n_pairs(),
                fallback_events: r.fallbacks,
            })
            .collect(),
        models: cells
            .iter()
            .zip(&model_tasks)
            .map(|(c, &(m, s))| ModelEntry {
                model: m.as_str().into(),
                setting: s.label().into(),
                threshold: format_threshold(c.calibration.threshold),
                calibration_mmr: c.calibration.mmr,
                lambda: c.fitted.lambda,
                em_converged: c.fitted.converged,
                em_iterations: c.fitted.iterations,
                u_pairs_seed: seeds.u_pairs(m, s),
                parameters: c.fitted.clone(),
            })
            .collect(),
        decisions: decision_defaults(),
    };
    let exposure = replicates.into_iter().flat_map(|r| r.exposure).collect();
    Ok(RunReport { cells, exposure, curves, manifest })
}

/// 101 evenly spaced thresholds across the finite best weights.
fn threshold_curve(best: &[BestCandidate]) -> Vec<(f64, f64, f64)> {
    let ws: Vec<f64> = best.iter().filter_map(|b| b.weight).collect();
    let (lo, hi) = ws.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &w| (l.min(w), h.max(w)));
    if ws.is_empty() {
        return Vec::new();
    }
    let grid: Vec<f64> = (0..=100).map(|i| lo + (hi - lo) * i as f64 / 100.0).collect();
    mmr_curve(best, &grid)
}

fn pct(x: f64) -> String {
    format!("{:.4}", 100.0 * x)
}

fn pp(x: f64) -> String {
    format!("{x:.4}")
}

/// Mean, low and high; the interval is blank with a single replicate.
fn summary_fields(values: &[f64], fmt: fn(f64) -> String) -> Result<[String; 3]> {
    if values.len() == 1 {
        return Ok([fmt(values[0]), String::new(), String::new()]);
    }
    let s = aggregate_replicates(values)?;
    Ok([fmt(s.mean), fmt(s.ci_low), fmt(s.ci_high)])
}

pub fn write_reports(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut overall = csv::Writer::from_path(dir.join("overall.csv"))?;
    overall.write_record([
        "model",
        "setting",
        "fmr_pct_mean",
        "fmr_pct_lo",
        "fmr_pct_hi",
        "mmr_pct_mean",
        "mmr_pct_lo",
        "mmr_pct_hi",
        "threshold",
        "replicates",
    ])?;
    for c in &report.cells {
        let fmr: Vec<f64> = c.replicates.iter().map(|r| r.overall.fmr().unwrap_or(0.0)).collect();
        let mmr: Vec<f64> = c.replicates.iter().map(|r| r.overall.mmr().unwrap_or(0.0)).collect();
        let mut row = vec![c.model.as_str().to_string(), c.setting.label().to_string()];
        row.extend(summary_fields(&fmr, pct)?);
        row.extend(summary_fields(&mmr, pct)?);
        row.push(format_threshold(c.calibration.threshold));
        row.push(c.replicates.len().to_string());
        overall.write_record(&row)?;
    }
    overall.flush()?;

    let mut by_group = csv::Writer::from_path(dir.join("by_group.csv"))?;
    by_group.write_record([
        "model",
        "setting",
        "group",
        "mmr_pct_mean",
        "mmr_pct_lo",
        "mmr_pct_hi",
        "fmr_pct_mean",
        "fmr_pct_lo",
        "fmr_pct_hi",
        "mmr_disparity_pp_mean",
        "mmr_disparity_pp_lo",
        "mmr_disparity_pp_hi",
        "fmr_disparity_pp_mean",
        "fmr_disparity_pp_lo",
        "fmr_disparity_pp_hi",
    ])?;
    let mut replicates = csv::Writer::from_path(dir.join("replicates.csv"))?;
    replicates.write_record([
        "model",
        "setting",
        "replicate",
        "group",
        "n",
        "correct",
        "false_match",
        "missed",
        "fmr",
        "mmr",
        "mmr_disparity_pp",
        "fmr_disparity_pp",
    ])?;
    for c in &report.cells {
        let Some(first) = c.replicates.first() else { continue };
        for g in first.groups.iter().map(|g| g.group.as_str()) {
            let rows: Vec<_> = c.replicates.iter().filter_map(|r| r.group(g)).collect();
            // a group absent from some replicate's sample has no rates there
            let col = |f: fn(&crate::evaluation::GroupRates) -> Option<f64>| -> Vec<f64> {
                rows.iter().filter_map(|r| f(r)).collect()
            };
            let mut row = vec![c.model.as_str().to_string(), c.setting.label().to_string(), g.to_string()];
            for (vals, f) in [
                (col(|r| r.mmr), pct as fn(f64) -> String),
                (col(|r| r.fmr), pct),
                (col(|r| r.mmr_disparity_pp), pp),
                (col(|r| r.fmr_disparity_pp), pp),
            ] {
                if vals.is_empty() {
                    row.extend([String::new(), String::new(), String::new()]);
                } else {
                    row.extend(summary_fields(&vals, f)?);
                }
            }
            by_group.write_record(&row)?;
        }
        for (k, r) in c.replicates.iter().enumerate() {
            let overall_row = [
                "ALL".to_string(),
                r.overall.n.to_string(),
                r.overall.correct.to_string(),
                r.overall.false_match.to_string(),
                r.overall.missed.to_string(),
                r.overall.fmr().map(|x| format!("{x:.6}")).unwrap_or_default(),
                r.overall.mmr().map(|x| format!("{x:.6}")).unwrap_or_default(),
                String::new(),
                String::new(),
            ];
            let mut rows = vec![overall_row];
            for g in &r.groups {
                let f = |x: Option<f64>| x.map(|x| format!("{x:.6}")).unwrap_or_default();
                rows.push([
                    g.group.clone(),
                    g.counts.n.to_string(),
                    g.counts.correct.to_string(),
                    g.counts.false_match.to_string(),
                    g.counts.missed.to_string(),
                    f(g.fmr),
                    f(g.mmr),
                    f(g.mmr_disparity_pp),
                    f(g.fmr_disparity_pp),
                ]);
            }
            for rest in rows {
                let mut row = vec![c.model.as_str().to_string(), c.setting.label().to_string(), (k + 1).to_string()];
                row.extend(rest);
                replicates.write_record(&row)?;
            }
        }
    }
    by_group.flush()?;
    replicates.flush()?;

    let mut exposure = csv::Writer::from_path(dir.join("exposure.csv"))?;
    exposure.write_record(["setting", "replicate", "field", "group", "eligible", "exposed"])?;
    for e in &report.exposure {
        exposure.write_record([
            e.setting.clone(),
            e.replicate.to_string(),
            e.field.as_str().to_string(),
            e.group.clone(),
            e.eligible.to_string(),
            e.exposed.to_string(),
        ])?;
    }
    exposure.flush()?;

    let mut curves = csv::Writer::from_path(dir.join("mmr_curves.csv"))?;
    curves.write_record(["model", "setting", "threshold", "mmr", "fmr"])?;
    for (m, s, pts) in &report.curves {
        for (t, mmr, fmr) in pts {
            curves.write_record([
                m.as_str().to_string(),
                s.label().to_string(),
                format!("{t:.6}"),
                format!("{mmr:.6}"),
                format!("{fmr:.6}"),
            ])?;
        }
    }
    curves.flush()?;

    write_manifest(&report.manifest, dir)
}

fn write_manifest(m: &Manifest, dir: &Path) -> Result<()> {
    let mut f = fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut f, m)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Run the whole experiment and write every report into the configured
/// output directory. On failure a manifest recording the completed stages
/// and the error is still written.
pub fn run_all(cfg: &RunConfig) -> Result<RunReport> {
    let mut progress = Vec::new();
    match execute(cfg, &mut progress) {
        Ok(report) => {
            write_reports(&report, &cfg.output_dir)?;
            Ok(report)
        }
        Err(e) => {
            fs::create_dir_all(&cfg.output_dir)?;
            let failed = Manifest {
                status: "failed".into(),
                error: Some(e.to_string()),
                stages_completed: progress,
                config_hash: cfg.hash(),
                config: cfg.clone(),
                master_seed: cfg.master_seed.unwrap_or_default(),
                synth_seed: None,
                drift_seed: None,
                base_records: 0,
                discrepancies: 0,
                embedding_explained_variance: Vec::new(),
                embedding_cuts: Vec::new(),
                replicates: Vec::new(),
                models: Vec::new(),
                decisions: decision_defaults(),
            };
            write_manifest(&failed, &cfg.output_dir)?;
            Err(e)
        }
    }
}
