use std::collections::HashMap;

use namelink::evaluation::{
    aggregate_replicates, calibrate_threshold, classify_outcomes, mmr_at, rates_and_disparities, stratified_sample,
    CorruptionStatus, Stratum,
};
use namelink::linkage::MatchDecision;
use namelink::{PersonRecord, RecordId};

fn stratum(group: &str) -> Stratum {
    Stratum { group: group.into(), status: CorruptionStatus::from_flags(false, false) }
}

fn decision(left: &str, right: Option<&str>) -> MatchDecision {
    MatchDecision { left: left.into(), right: right.map(Into::into), weight: Some(0.0), threshold: 0.0 }
}

#[test]
fn rates_and_disparities_by_hand() {
    // group A: 4 records, 1 false match, 1 missed; group B: 2 records, 1 missed
    let decisions = vec![
        decision("a1", Some("a1")),
        decision("a2", Some("a2")),
        decision("a3", Some("b1")),
        decision("a4", None),
        decision("b1", Some("b1")),
        decision("b2", None),
    ];
    let strata: HashMap<RecordId, Stratum> = decisions
        .iter()
        .map(|d| (d.left.clone(), stratum(if d.left.0.starts_with('a') { "A" } else { "B" })))
        .collect();
    let counts = classify_outcomes(&decisions, &strata, |id| Some(id.clone())).unwrap();
    let report = rates_and_disparities(&counts, &["A".into(), "B".into(), "C".into()], "A").unwrap();
    let a = report.group("A").unwrap();
    assert_eq!((a.fmr, a.mmr), (Some(0.25), Some(0.25)));
    let b = report.group("B").unwrap();
    assert_eq!(b.mmr_disparity_pp, Some(25.0));
    assert_eq!(b.fmr_disparity_pp, Some(-25.0));
    assert_eq!(report.group("C").unwrap().mmr, None);
    assert_eq!(report.overall.n, 6);
    assert!(rates_and_disparities(&counts, &["A".into()], "Z").is_err());
    assert!(classify_outcomes(&decisions, &strata, |_| None).is_err());
}

#[test]
fn calibration_by_hand() {
    let w = [Some(1.0), Some(2.0), Some(3.0), None, Some(5.0)];
    // accepting >= 2 misses {1.0, None}: 40%; >= 3 misses 60%
    let c = calibrate_threshold(&w, 0.4).unwrap();
    assert_eq!((c.threshold, c.mmr), (2.0, 0.4));
    assert_eq!(mmr_at(&w, f64::NEG_INFINITY), 0.2);
    // -inf and 1.0 both give 20%: the lower threshold wins
    assert_eq!(calibrate_threshold(&w, 0.1).unwrap().threshold, f64::NEG_INFINITY);
    assert_eq!(calibrate_threshold(&w, 1.0).unwrap().threshold, f64::INFINITY);
    assert!(calibrate_threshold(&[], 0.2).is_err());
}

#[test]
fn t_interval_two_replicates() {
    // t(0.975, 1) = tan(0.475 pi)
    let s = aggregate_replicates(&[1.0, 3.0]).unwrap();
    let t = (0.475 * std::f64::consts::PI).tan();
    assert!((s.half_width - t).abs() < 1e-6, "{}", s.half_width);
    assert_eq!(s.mean, 2.0);
    assert!(aggregate_replicates(&[1.0]).is_err());
}

#[test]
fn stratified_sample_is_sorted_distinct_and_proportional() {
    let records: Vec<PersonRecord> = (0..1000)
        .map(|i| PersonRecord {
            id: RecordId(format!("{i:04}")),
            forename: "A".into(),
            surname: "B".into(),
            birth_year: None,
            gender: String::new(),
            group: String::new(),
        })
        .collect();
    let strata: Vec<Stratum> = (0..1000).map(|i| stratum(if i < 800 { "big" } else { "small" })).collect();
    let idx = stratified_sample(&records, &strata, 0.1, 4).unwrap();
    assert_eq!(idx.len(), 100);
    assert!(idx.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(idx.iter().filter(|&&i| i >= 800).count(), 20);
    assert_eq!(idx, stratified_sample(&records, &strata, 0.1, 4).unwrap());
}
