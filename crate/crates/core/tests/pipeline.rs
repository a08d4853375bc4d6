use std::collections::BTreeMap;
use std::fs;

use namelink::corruption::SettingKind;
use namelink::linkage::ModelFamily;
use namelink::pipeline::synth::{zipf_weights, PoolSpec};
use namelink::pipeline::{ingest_reader, run_all, synth_corpus, write_dataset, ColumnMap, RunConfig, SynthSpec};
use namelink::{Error, NameField};

const HEADER: &str = "id,forename,surname,birth_year,gender,ethnic_group\n";

#[test]
fn ingest_normalises_three_rows() {
    let text =
        format!("{HEADER}1, ana ,lópez,1980,f,Hispanic\n2,Bo,Li,,M,Asian\n,X,Y,1990,F,Other\n3,Cy,,1975,m,Other\n");
    let d = ingest_reader(text.as_bytes(), &ColumnMap::default()).unwrap();
    assert_eq!(d.len(), 3);
    assert_eq!(d.get(0).forename, "ANA");
    assert_eq!(d.get(0).surname, "LÓPEZ");
    assert_eq!(d.get(0).gender, "F");
    assert_eq!(d.get(1).birth_year, None);
    assert!(!d.get(2).is_corruptible(NameField::Surname));

    let mut out = Vec::new();
    write_dataset(&d, &mut out).unwrap();
    assert_eq!(ingest_reader(out.as_slice(), &ColumnMap::default()).unwrap(), d);
}

#[test]
fn ingest_rejects_bad_input() {
    let missing = "id,forename,surname,birth_year,ethnic_group\n1,A,B,1980,X\n";
    assert!(matches!(ingest_reader(missing.as_bytes(), &ColumnMap::default()), Err(Error::Schema(_))));
    let dup = format!("{HEADER}1,A,B,1980,F,X\n1,C,D,1981,M,X\n");
    assert!(matches!(ingest_reader(dup.as_bytes(), &ColumnMap::default()), Err(Error::DuplicateId(_))));
    let year = format!("{HEADER}1,A,B,nineteen,F,X\n");
    assert!(matches!(ingest_reader(year.as_bytes(), &ColumnMap::default()), Err(Error::Schema(_))));
}

#[test]
fn config_parsing_and_errors() {
    let cfg = RunConfig::parse("models: list = jw, combined\nsettings: ints = 1, 3\nreplicates: int = 2\n").unwrap();
    assert_eq!(cfg.models, vec![ModelFamily::Jw, ModelFamily::Combined]);
    assert_eq!(cfg.settings, vec![SettingKind::Uniform, SettingKind::Disproportionate]);
    for bad in [
        "replicates: int = 0",
        "unknown_key: int = 1",
        "replicates: float = 2.0",
        "overall_rate: float = 1.5",
        "models: list = jw, nonsense",
        "replicates: int = 2\nreplicates: int = 3",
        "no separator here",
        "snapshot_a: path = a.csv",
    ] {
        assert!(matches!(RunConfig::parse(bad), Err(Error::Config(_))), "{bad}");
    }
}

#[test]
fn config_hash_ignores_output_location() {
    let a = RunConfig { output_dir: "x".into(), ..RunConfig::default() };
    let b = RunConfig { output_dir: "y".into(), ..RunConfig::default() };
    let c = RunConfig { replicates: 3, ..a.clone() };
    assert_eq!(a.hash(), b.hash());
    assert_ne!(a.hash(), c.hash());
}

fn small_config(dir: &std::path::Path) -> RunConfig {
    RunConfig {
        output_dir: dir.to_path_buf(),
        models: vec![ModelFamily::Jw],
        settings: vec![SettingKind::Uniform],
        replicates: 1,
        synth_size: 4000,
        u_pairs: 20_000,
        master_seed: Some(3),
        ..RunConfig::default()
    }
}

#[test]
fn single_cell_run_writes_one_overall_row() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_all(&small_config(dir.path())).unwrap();
    assert_eq!(report.cells.len(), 1);
    let overall = fs::read_to_string(dir.path().join("overall.csv")).unwrap();
    let rows: Vec<&str> = overall.lines().collect();
    assert_eq!(rows.len(), 2, "{overall}");
    assert!(rows[1].starts_with("jw,setting1,"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    for f in ["by_group.csv", "replicates.csv", "exposure.csv", "mmr_curves.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn failed_run_leaves_a_failed_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        snapshot_a: Some(dir.path().join("missing_a.csv")),
        snapshot_b: Some(dir.path().join("missing_b.csv")),
        ..small_config(&dir.path().join("out"))
    };
    assert!(run_all(&cfg).is_err());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "failed");
    assert!(!manifest["error"].as_str().unwrap().is_empty());
    assert!(!dir.path().join("out/overall.csv").exists());
}

#[test]
fn synthetic_counts_are_exact() {
    let d = synth_corpus(&SynthSpec::desk_scale(10_000, 1)).unwrap();
    assert_eq!(d.len(), 10_000);
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in d.iter() {
        *counts.entry(r.group.as_str()).or_default() += 1;
    }
    assert_eq!(counts["Non-Hispanic White"], 6200);
    assert_eq!(counts["Non-Hispanic Black"], 2000);
    assert_eq!(counts["Hispanic (White or Black)"], 500);
    assert_eq!(counts["Asian"], 250);
}

#[test]
fn most_common_name_follows_zipf() {
    let spec = SynthSpec {
        sizes: BTreeMap::from([("Non-Hispanic White".to_string(), 50_000)]),
        forenames: PoolSpec { size: 200, zipf: 1.0 },
        ..SynthSpec::desk_scale(0, 9)
    };
    let d = synth_corpus(&spec).unwrap();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in d.iter() {
        *counts.entry(r.forename.as_str()).or_default() += 1;
    }
    let top = *counts.values().max().unwrap() as f64 / d.len() as f64;
    let expected = zipf_weights(200, 1.0)[0];
    assert!((top - expected).abs() < 0.02, "{top} vs {expected}");
}
