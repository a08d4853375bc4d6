use std::collections::BTreeMap;

use namelink::corruption::{corrupt_dataset, CorruptionSetting, SettingKind};
use namelink::pipeline::{synth_corpus, SynthSpec};
use namelink::profiler::reference_marginals;
use namelink::{Dataset, NameField};

fn corpus() -> Dataset {
    synth_corpus(&SynthSpec::desk_scale(4000, 17)).unwrap()
}

#[test]
fn same_seed_same_corruption() {
    let d = corpus();
    let p = reference_marginals().independent_profiles();
    let s = CorruptionSetting::new(SettingKind::Uniform, 0.1, 3);
    let (a, audit_a) = corrupt_dataset(&d, &s, &p).unwrap();
    let (b, audit_b) = corrupt_dataset(&d, &s, &p).unwrap();
    assert_eq!(a, b);
    assert_eq!(audit_a, audit_b);
    let (c, _) = corrupt_dataset(&d, &CorruptionSetting::new(SettingKind::Uniform, 0.1, 4), &p).unwrap();
    assert_ne!(a, c);
}

#[test]
fn equal_exposure_hits_every_group_budget() {
    let d = corpus();
    let p = reference_marginals().independent_profiles();
    let s = CorruptionSetting::new(SettingKind::EqualExposure, 0.1, 8);
    let (out, audit) = corrupt_dataset(&d, &s, &p).unwrap();
    for field in NameField::ALL {
        let mut eligible: BTreeMap<&str, usize> = BTreeMap::new();
        for r in d.iter().filter(|r| r.is_corruptible(field)) {
            *eligible.entry(r.group.as_str()).or_default() += 1;
        }
        let got = audit.exposure_counts(field);
        for (g, n) in eligible {
            assert_eq!(got[g], (0.1 * n as f64).round() as usize, "{g} {field}");
        }
    }
    // every exposed name changed, and nothing else did
    for (before, after) in d.iter().zip(out.iter()) {
        assert_eq!(before.id, after.id);
        assert_eq!(before.birth_year, after.birth_year);
    }
    for row in &audit.rows {
        assert_eq!(row.exposed, row.original != row.corrupted, "{row:?}");
    }
}

#[test]
fn zero_rate_is_a_no_op() {
    let d = corpus();
    let p = reference_marginals().independent_profiles();
    let (out, audit) = corrupt_dataset(&d, &CorruptionSetting::new(SettingKind::Uniform, 0.0, 1), &p).unwrap();
    assert_eq!(out, d);
    assert_eq!(audit.exposed(NameField::Forename).count() + audit.exposed(NameField::Surname).count(), 0);
}

#[test]
fn disproportionate_setting_needs_weights() {
    let d = corpus();
    let p = reference_marginals().independent_profiles();
    let s = CorruptionSetting::new(SettingKind::Disproportionate, 0.1, 1);
    assert!(corrupt_dataset(&d, &s, &p).is_err());
}

#[test]
fn audit_csv_has_one_row_per_record_and_field() {
    let d = synth_corpus(&SynthSpec::desk_scale(300, 2)).unwrap();
    let p = reference_marginals().independent_profiles();
    let (_, audit) = corrupt_dataset(&d, &CorruptionSetting::new(SettingKind::Uniform, 0.2, 1), &p).unwrap();
    let mut buf = Vec::new();
    audit.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * d.len());
}
