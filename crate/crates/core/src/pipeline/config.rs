//! Run configuration.
//!
//! The file format is one `key: type = value` entry per line. Blank lines and
//! lines starting with `#` are ignored. Types are `int`, `float`, `bool`,
//! `str`, `path`, `list` (comma-separated strings), `floats`, `ints` and `map`
//! (comma-separated `name=number` pairs). Unknown keys and type mismatches are
//! errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corruption::{default_disproportionate_weights, SettingKind};
use crate::error::{Error, Result};
use crate::evaluation::{DEFAULT_SAMPLE_FRACTION, DEFAULT_TARGET_MMR};
use crate::linkage::{EmOptions, LevelConfig, ModelFamily};

pub const REFERENCE_GROUP: &str = "Non-Hispanic White";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Earlier and later snapshots used for error profiling.
    pub snapshot_a: Option<PathBuf>,
    pub snapshot_b: Option<PathBuf>,
    /// Extract to corrupt; defaults to the later snapshot, or a synthetic
    /// corpus when no inputs are given.
    pub base: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub models: Vec<ModelFamily>,
    pub settings: Vec<SettingKind>,
    pub replicates: usize,
    pub overall_rate: f64,
    pub setting3_weights: BTreeMap<String, f64>,
    pub sample_fraction: f64,
    pub target_mmr: f64,
    pub master_seed: Option<u64>,
    pub reference_group: String,
    pub levels: LevelConfig,
    pub u_pairs: usize,
    pub em: EmOptions,
    pub pooled_fallback: bool,
    pub synth_size: usize,
    pub synth_drift_rate: f64,
    /// Share of synthetic forename drifts that are short forms.
    pub synth_short_form_share: f64,
    pub write_audits: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            snapshot_a: None,
            snapshot_b: None,
            base: None,
            output_dir: PathBuf::from("out"),
            models: ModelFamily::ALL.to_vec(),
            settings: SettingKind::ALL.to_vec(),
            replicates: 5,
            overall_rate: 0.10,
            setting3_weights: default_disproportionate_weights(),
            sample_fraction: DEFAULT_SAMPLE_FRACTION,
            target_mmr: DEFAULT_TARGET_MMR,
            master_seed: None,
            reference_group: REFERENCE_GROUP.to_string(),
            levels: LevelConfig::default(),
            u_pairs: 100_000,
            em: EmOptions::default(),
            pooled_fallback: true,
            synth_size: 50_000,
            synth_drift_rate: 0.08,
            synth_short_form_share: 0.8,
            write_audits: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
    Path(PathBuf),
    List(Vec<String>),
    Floats(Vec<f64>),
    Ints(Vec<i64>),
    Map(BTreeMap<String, f64>),
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(str::to_string).collect()
}

fn parse_value(ty: &str, raw: &str, line: usize) -> Result<Value> {
    let bad = |what: &str| Error::Config(format!("line {line}: cannot read {raw:?} as {what}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("a number"));
    Ok(match ty {
        "int" => Value::Int(raw.parse().map_err(|_| bad("int"))?),
        "float" => Value::Float(num(raw)?),
        "bool" => Value::Bool(raw.parse().map_err(|_| bad("bool"))?),
        "str" => Value::Str(raw.to_string()),
        "path" => Value::Path(PathBuf::from(raw)),
        "list" => Value::List(split_list(raw)),
        "floats" => Value::Floats(split_list(raw).iter().map(|s| num(s)).collect::<Result<_>>()?),
        "ints" => Value::Ints(
            split_list(raw).iter().map(|s| s.parse::<i64>().map_err(|_| bad("ints"))).collect::<Result<_>>()?,
        ),
        "map" => Value::Map(
            split_list(raw)
                .iter()
                .map(|kv| {
                    let (k, v) = kv.rsplit_once('=').ok_or_else(|| bad("name=number"))?;
                    Ok((k.trim().to_string(), num(v)?))
                })
                .collect::<Result<_>>()?,
        ),
        other => return Err(Error::Config(format!("line {line}: unknown type {other:?}"))),
    })
}

fn expect_type(key: &str, v: &Value, line: usize) -> Error {
    Error::Config(format!("line {line}: key {key:?} does not accept {v:?}"))
}

fn non_negative(key: &str, v: i64, line: usize) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::Config(format!("line {line}: {key} must be non-negative")))
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw_line.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let (key, rest) =
                l.split_once(':').ok_or_else(|| Error::Config(format!("line {line}: expected `key: type = value`")))?;
            let (ty, raw) = rest
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected `key: type = value`")))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {line}: duplicate key {key:?}")));
            }
            let v = parse_value(ty.trim(), raw.trim(), line)?;
            cfg.set(key, v, line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: Value, line: usize) -> Result<()> {
        match (key, v) {
            ("snapshot_a", Value::Path(p)) => self.snapshot_a = Some(p),
            ("snapshot_b", Value::Path(p)) => self.snapshot_b = Some(p),
            ("base", Value::Path(p)) => self.base = Some(p),
            ("output_dir", Value::Path(p)) => self.output_dir = p,
            ("models", Value::List(xs)) => {
                self.models = xs.iter().map(|s| ModelFamily::parse(s)).collect::<Result<_>>()?
            }
            ("settings", Value::List(xs)) => {
                self.settings = xs.iter().map(|s| SettingKind::parse(s)).collect::<Result<_>>()?
            }
            ("settings", Value::Ints(xs)) => {
                self.settings = xs.iter().map(|s| SettingKind::parse(&s.to_string())).collect::<Result<_>>()?
            }
            ("replicates", Value::Int(n)) => self.replicates = non_negative(key, n, line)?,
            ("overall_rate", Value::Float(x)) => self.overall_rate = x,
            ("setting3_weights", Value::Map(m)) => self.setting3_weights = m,
            ("sample_fraction", Value::Float(x)) => self.sample_fraction = x,
            ("target_mmr", Value::Float(x)) => self.target_mmr = x,
            ("master_seed", Value::Int(n)) => self.master_seed = Some(n as u64),
            ("reference_group", Value::Str(s)) => self.reference_group = s,
            ("jw_bands", Value::Floats(xs)) => self.levels.jw_bands = xs,
            ("lev_bands", Value::Ints(xs)) => {
                self.levels.lev_bands = xs.iter().map(|&x| non_negative(key, x, line)).collect::<Result<_>>()?
            }
            ("per_component", Value::Bool(b)) => self.levels.per_component = b,
            ("u_pairs", Value::Int(n)) => self.u_pairs = non_negative(key, n, line)?,
            ("em_max_iterations", Value::Int(n)) => self.em.max_iterations = non_negative(key, n, line)?,
            ("em_tolerance", Value::Float(x)) => self.em.tolerance = x,
            ("pooled_fallback", Value::Bool(b)) => self.pooled_fallback = b,
            ("synth_size", Value::Int(n)) => self.synth_size = non_negative(key, n, line)?,
            ("synth_drift_rate", Value::Float(x)) => self.synth_drift_rate = x,
            ("synth_short_form_share", Value::Float(x)) => self.synth_short_form_share = x,
            ("write_audits", Value::Bool(b)) => self.write_audits = b,
            (
                "snapshot_a"
                | "snapshot_b"
                | "base"
                | "output_dir"
                | "models"
                | "settings"
                | "replicates"
                | "overall_rate"
                | "setting3_weights"
                | "sample_fraction"
                | "target_mmr"
                | "master_seed"
                | "reference_group"
                | "jw_bands"
                | "lev_bands"
                | "per_component"
                | "u_pairs"
                | "em_max_iterations"
                | "em_tolerance"
                | "pooled_fallback"
                | "synth_size"
                | "synth_drift_rate"
                | "synth_short_form_share"
                | "write_audits",
                v,
            ) => return Err(expect_type(key, &v, line)),
            (other, _) => return Err(Error::Config(format!("line {line}: unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::Config(msg.to_string())) };
        check(!self.models.is_empty(), "at least one model is required")?;
        check(!self.settings.is_empty(), "at least one setting is required")?;
        check(self.replicates >= 1, "replicates must be at least 1")?;
        check((0.0..1.0).contains(&self.overall_rate), "overall_rate must be in [0, 1)")?;
        check(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0, "sample_fraction must be in (0, 1]")?;
        check((0.0..=1.0).contains(&self.target_mmr), "target_mmr must be in [0, 1]")?;
        check((0.0..1.0).contains(&self.synth_drift_rate), "synth_drift_rate must be in [0, 1)")?;
        check((0.0..=1.0).contains(&self.synth_short_form_share), "synth_short_form_share must be in [0, 1]")?;
        check(self.snapshot_a.is_some() == self.snapshot_b.is_some(), "snapshot_a and snapshot_b go together")?;
        check(
            self.base.is_none() || self.snapshot_a.is_some(),
            "a base extract needs a snapshot pair to profile errors from",
        )?;
        check(self.u_pairs > 0, "u_pairs must be positive")?;
        Ok(())
    }

    /// Stable JSON rendering used for hashing and the manifest.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    /// Hash of everything that can change results; the output location
    /// is left out so the same experiment hashes equally wherever it is written.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Some(m) = v.as_object_mut() {
            m.remove("output_dir");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_defaults() {
        let cfg = RunConfig::parse(
            "# run\nmodels: list = jw, combined\nsettings: ints = 1, 3\nreplicates: int = 2\n\
             setting3_weights: map = Hispanic (White or Black)=0.2, Asian=0.15\nmaster_seed: int = 7\n\
             jw_bands: floats = 0.9, 0.8\n",
        )
        .unwrap();
        assert_eq!(cfg.models, vec![ModelFamily::Jw, ModelFamily::Combined]);
        assert_eq!(cfg.settings, vec![SettingKind::Uniform, SettingKind::Disproportionate]);
        assert_eq!(cfg.replicates, 2);
        assert_eq!(cfg.setting3_weights["Hispanic (White or Black)"], 0.2);
        assert_eq!(cfg.master_seed, Some(7));
        assert_eq!(cfg.sample_fraction, 0.05);
        assert_eq!(cfg.levels.jw_bands, vec![0.9, 0.8]);
    }

    #[test]
    fn rejects_unknown_keys_and_wrong_types() {
        assert!(matches!(RunConfig::parse("replicate: int = 5"), Err(Error::Config(m)) if m.contains("unknown key")));
        assert!(RunConfig::parse("replicates: float = 5").is_err());
        assert!(RunConfig::parse("replicates: int = five").is_err());
        assert!(RunConfig::parse("replicates = 5").is_err());
        assert!(RunConfig::parse("replicates: int = 5\nreplicates: int = 4").is_err());
        assert!(RunConfig::parse("models: list = jw, bogus").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::parse("master_seed: int = 1").unwrap();
        let b = RunConfig::parse("master_seed: int = 2").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), RunConfig::parse("master_seed: int = 1").unwrap().hash());
    }
}
