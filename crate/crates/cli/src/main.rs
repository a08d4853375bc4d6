use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use namelink::corruption::{corrupt_dataset, CorruptionSetting, SettingKind};
use namelink::evaluation::{calibrate_from_best, classify_outcomes, rates_and_disparities, CorruptionStatus, Stratum};
use namelink::linkage::{
    block, decide, default_rules, fit_model, read_decisions_csv, score_best, write_decisions_csv, ComparisonSpec,
    EmbeddingSupport, FitOptions, LevelConfig, ModelFamily, TfTables,
};
use namelink::name_features::{CorpusStats, EmbeddingDocument};
use namelink::pipeline::config::REFERENCE_GROUP;
use namelink::pipeline::{
    drift_snapshot, ingest, run_all, stage1, synth_corpus, write_dataset_file, RunConfig, SynthSpec,
};
use namelink::profiler::ProfileSet;
use namelink::{Dataset, RecordId};

#[derive(Parser)]
#[command(name = "namelink", version, about = "Name-error profiling, corruption and probabilistic linkage")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Profile name discrepancies between two snapshots and fit the forename embedding.
    Profile(ProfileArgs),
    /// Generate a synthetic person corpus.
    Synth(SynthArgs),
    /// Corrupt an extract under one exposure setting.
    Corrupt(CorruptArgs),
    /// Fit a linkage model and link left records to a right extract.
    Link(LinkArgs),
    /// Score link decisions against identity gold labels.
    Evaluate(EvaluateArgs),
    /// Run the full experiment and write the reports.
    RunAll(RunAllArgs),
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    snapshot_a: PathBuf,
    #[arg(long)]
    snapshot_b: PathBuf,
    /// Extract whose groups and forenames define the profile and embedding.
    /// Defaults to the later snapshot.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Output error profile (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Output embedding model and thresholds (JSON).
    #[arg(long)]
    embedding_out: Option<PathBuf>,
    #[arg(long)]
    per_component: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 50_000)]
    size: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write a drifted later snapshot of the corpus.
    #[arg(long)]
    drift_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.08)]
    drift_rate: f64,
    /// Share of forename drifts that are short forms.
    #[arg(long, default_value_t = 0.8)]
    short_form_share: f64,
}

#[derive(Args)]
struct CorruptArgs {
    #[arg(long)]
    input: PathBuf,
    /// Error profile written by `profile`.
    #[arg(long)]
    profile: PathBuf,
    /// uniform, equal_exposure_ethnic_mechanism, disproportionate (or 1, 2, 3).
    #[arg(long)]
    setting: String,
    #[arg(long, default_value_t = 0.10)]
    rate: f64,
    /// Group weights for the disproportionate setting, `group=weight,...`.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    no_pooled_fallback: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Args)]
struct LinkArgs {
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    /// jw, jw_no_tf, levenshtein, levenshtein_no_tf or combined.
    #[arg(long)]
    model: String,
    /// Embedding written by `profile`; required for the combined model.
    #[arg(long)]
    embedding: Option<PathBuf>,
    /// Fixed threshold. Without it the threshold is calibrated on the left
    /// records against identity gold labels.
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 0.20)]
    target_mmr: f64,
    #[arg(long, default_value_t = 100_000)]
    u_pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Write fitted model parameters (JSON).
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    decisions: PathBuf,
    /// Evaluated (left) records, for group labels.
    #[arg(long)]
    left: PathBuf,
    /// Corruption audit, for the corruption status of each record.
    #[arg(long)]
    audit: Option<PathBuf>,
    #[arg(long, default_value = REFERENCE_GROUP)]
    reference_group: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunAllArgs {
    /// Config file of `key: type = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    snapshot_a: Option<PathBuf>,
    #[arg(long)]
    snapshot_b: Option<PathBuf>,
    #[arg(long)]
    base: Option<PathBuf>,
    /// Comma-separated model families.
    #[arg(long)]
    models: Option<String>,
    /// Comma-separated settings.
    #[arg(long)]
    settings: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    overall_rate: Option<f64>,
    #[arg(long)]
    sample_fraction: Option<f64>,
    #[arg(long)]
    target_mmr: Option<f64>,
    #[arg(long)]
    synth_size: Option<usize>,
}

fn parse_weights(s: &str) -> Result<BTreeMap<String, f64>> {
    s.split(',')
        .filter(|kv| !kv.trim().is_empty())
        .map(|kv| {
            let (k, v) = kv.rsplit_once('=').with_context(|| format!("bad weight {kv:?}"))?;
            Ok((k.trim().to_string(), v.trim().parse().with_context(|| format!("bad weight {kv:?}"))?))
        })
        .collect()
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

fn load(path: &Path) -> Result<Dataset> {
    ingest(path).with_context(|| format!("reading {}", path.display()))
}

fn profile(a: ProfileArgs) -> Result<()> {
    let snap_a = load(&a.snapshot_a)?;
    let snap_b = load(&a.snapshot_b)?;
    let base = match &a.base {
        Some(p) => load(p)?,
        None => snap_b.clone(),
    };
    let s1 = stage1(&snap_a, &snap_b, &base, a.per_component)?;
    info!("{} discrepancies profiled", s1.n_discrepancies);
    write_json(&a.out, &s1.profiles)?;
    if let Some(p) = &a.embedding_out {
        write_json(p, &s1.embedding)?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let corpus = synth_corpus(&SynthSpec::desk_scale(a.size, a.seed))?;
    write_dataset_file(&corpus, &a.out)?;
    if let Some(p) = &a.drift_out {
        write_dataset_file(&drift_snapshot(&corpus, a.drift_rate, a.short_form_share, a.seed.wrapping_add(1))?, p)?;
    }
    Ok(())
}

fn corrupt(a: CorruptArgs) -> Result<()> {
    let base = load(&a.input)?;
    let profiles: ProfileSet = read_json(&a.profile)?;
    let mut setting = CorruptionSetting::new(SettingKind::parse(&a.setting)?, a.rate, a.seed);
    if let Some(w) = &a.weights {
        setting = setting.with_weights(parse_weights(w)?);
    } else if setting.kind == SettingKind::Disproportionate {
        setting = setting.with_weights(RunConfig::default().setting3_weights);
    }
    setting.pooled_fallback = !a.no_pooled_fallback;
    let (corrupted, audit) = corrupt_dataset(&base, &setting, &profiles)?;
    write_dataset_file(&corrupted, &a.out)?;
    if let Some(p) = &a.audit {
        audit.write_csv(BufWriter::new(File::create(p)?))?;
    }
    Ok(())
}

fn link_cmd(a: LinkArgs) -> Result<()> {
    let left = load(&a.left)?;
    let right = load(&a.right)?;
    let family = ModelFamily::parse(&a.model)?;
    let support = match (&a.embedding, family.needs_embedding()) {
        (Some(p), _) => {
            let doc: EmbeddingDocument = read_json(p)?;
            let stats = CorpusStats::from_names(right.iter().map(|r| r.forename.as_str()));
            let mut s = EmbeddingSupport::new(doc, stats);
            s.warm(left.iter().chain(right.iter()));
            Some(s)
        }
        (None, true) => bail!("model {family} needs --embedding"),
        (None, false) => None,
    };
    let candidates = block(left.records(), &right, &default_rules());
    let spec = ComparisonSpec::for_family(family, &LevelConfig::default());
    let opts = FitOptions { u_pairs: a.u_pairs, seed: a.seed, ..FitOptions::default() };
    let model = fit_model(family, spec, left.records(), &right, &candidates, support.as_ref(), &opts)?;
    let tf = TfTables::from_dataset(&right);
    let best =
        score_best(left.records(), &right, &candidates, &model, model.uses_tf().then_some(&tf), support.as_ref());
    let threshold = match a.threshold {
        Some(t) => t,
        None => calibrate_from_best(&best, a.target_mmr)?.threshold,
    };
    info!("threshold {threshold}");
    write_decisions_csv(&decide(&best, threshold), BufWriter::new(File::create(&a.out)?))?;
    if let Some(p) = &a.model_out {
        write_json(p, &model)?;
    }
    Ok(())
}

/// (forename exposed, surname exposed) by id from an audit CSV.
fn read_audit_status(path: &Path) -> Result<HashMap<RecordId, (bool, bool)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |n: &str| headers.iter().position(|h| h == n).with_context(|| format!("audit lacks column {n:?}"));
    let (id, field, exposed) = (col("id")?, col("field")?, col("exposed")?);
    let mut out: HashMap<RecordId, (bool, bool)> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.get(exposed) != Some("true") {
            continue;
        }
        let e = out.entry(RecordId(rec[id].to_string())).or_default();
        match &rec[field] {
            "forename" => e.0 = true,
            "surname" => e.1 = true,
            other => bail!("unknown field {other:?} in audit"),
        }
    }
    Ok(out)
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let decisions = read_decisions_csv(File::open(&a.decisions)?)?;
    let left = load(&a.left)?;
    let status = match &a.audit {
        Some(p) => read_audit_status(p)?,
        None => HashMap::new(),
    };
    let strata: HashMap<RecordId, Stratum> = left
        .iter()
        .map(|r| {
            let (f, s) = status.get(&r.id).copied().unwrap_or_default();
            (r.id.clone(), Stratum { group: r.group.clone(), status: CorruptionStatus::from_flags(f, s) })
        })
        .collect();
    let counts = classify_outcomes(&decisions, &strata, |id| Some(id.clone()))?;
    let report = rates_and_disparities(&counts, &left.groups(), &a.reference_group)?;
    let mut w = csv::Writer::from_path(&a.out)?;
    w.write_record([
        "group",
        "n",
        "correct",
        "false_match",
        "missed",
        "fmr",
        "mmr",
        "fmr_disparity_pp",
        "mmr_disparity_pp",
    ])?;
    let f = |x: Option<f64>| x.map(|x| format!("{x:.6}")).unwrap_or_default();
    let o = &report.overall;
    w.write_record([
        "ALL".to_string(),
        o.n.to_string(),
        o.correct.to_string(),
        o.false_match.to_string(),
        o.missed.to_string(),
        f(o.fmr()),
        f(o.mmr()),
        String::new(),
        String::new(),
    ])?;
    for g in &report.groups {
        w.write_record([
            g.group.clone(),
            g.counts.n.to_string(),
            g.counts.correct.to_string(),
            g.counts.false_match.to_string(),
            g.counts.missed.to_string(),
            f(g.fmr),
            f(g.mmr),
            f(g.fmr_disparity_pp),
            f(g.mmr_disparity_pp),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn run_all_cmd(a: RunAllArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::from_file(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    cfg.master_seed = Some(a.seed);
    if let Some(v) = a.output_dir {
        cfg.output_dir = v;
    }
    if a.snapshot_a.is_some() {
        cfg.snapshot_a = a.snapshot_a;
    }
    if a.snapshot_b.is_some() {
        cfg.snapshot_b = a.snapshot_b;
    }
    if a.base.is_some() {
        cfg.base = a.base;
    }
    if let Some(m) = &a.models {
        cfg.models = m.split(',').map(|s| ModelFamily::parse(s.trim())).collect::<Result<_, _>>()?;
    }
    if let Some(s) = &a.settings {
        cfg.settings = s.split(',').map(|s| SettingKind::parse(s.trim())).collect::<Result<_, _>>()?;
    }
    if let Some(v) = a.replicates {
        cfg.replicates = v;
    }
    if let Some(v) = a.overall_rate {
        cfg.overall_rate = v;
    }
    if let Some(v) = a.sample_fraction {
        cfg.sample_fraction = v;
    }
    if let Some(v) = a.target_mmr {
        cfg.target_mmr = v;
    }
    if let Some(v) = a.synth_size {
        cfg.synth_size = v;
    }
    let report = run_all(&cfg)?;
    info!("{} (model, setting) cells written to {}", report.cells.len(), cfg.output_dir.display());
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Profile(a) => profile(a),
        Command::Synth(a) => synth(a),
        Command::Corrupt(a) => corrupt(a),
        Command::Link(a) => link_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::RunAll(a) => run_all_cmd(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
