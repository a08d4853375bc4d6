//! Best-candidate scoring and thresholded link decisions.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::blocking::Candidates;
use super::comparison::{compare, EmbeddingSupport};
use super::model::{LinkageModel, TfTables};
use crate::error::Result;
use crate::record::{Dataset, PersonRecord, RecordId};

/// Highest-weight blocked candidate of one left record, regardless of any
/// threshold. Ties go to the smaller right id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestCandidate {
    pub left: RecordId,
    pub right: Option<RecordId>,
    pub weight: Option<f64>,
}

pub fn score_best(
    left: &[PersonRecord],
    right: &Dataset,
    candidates: &Candidates,
    model: &LinkageModel,
    tf: Option<&TfTables>,
    support: Option<&EmbeddingSupport>,
) -> Vec<BestCandidate> {
    left.par_iter()
        .zip(candidates.per_left.par_iter())
        .map(|(l, cands)| {
            let mut best: Option<(&PersonRecord, f64)> = None;
            for &j in cands {
                let r = right.get(j as usize);
                let v = compare(&model.spec, l, r, support);
                let w = model.match_weight(&v, Some(r), tf);
                best = match best {
                    Some((br, bw)) if bw > w || (bw == w && br.id <= r.id) => Some((br, bw)),
                    _ => Some((r, w)),
                };
            }
            BestCandidate { left: l.id.clone(), right: best.map(|b| b.0.id.clone()), weight: best.map(|b| b.1) }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub left: RecordId,
    pub right: Option<RecordId>,
    /// Weight of the best candidate, whether or not it was accepted.
    pub weight: Option<f64>,
    pub threshold: f64,
}

/// Accept each best candidate whose weight reaches `threshold`. Because the
/// best candidate is the maximum over all candidates, this equals choosing the
/// maximum among candidates at or above the threshold.
pub fn decide(best: &[BestCandidate], threshold: f64) -> Vec<MatchDecision> {
    best.iter()
        .map(|b| MatchDecision {
            left: b.left.clone(),
            right: match b.weight {
                Some(w) if w >= threshold => b.right.clone(),
                _ => None,
            },
            weight: b.weight,
            threshold,
        })
        .collect()
}

pub fn link(
    left: &[PersonRecord],
    right: &Dataset,
    candidates: &Candidates,
    model: &LinkageModel,
    tf: Option<&TfTables>,
    support: Option<&EmbeddingSupport>,
    threshold: f64,
) -> Vec<MatchDecision> {
    decide(&score_best(left, right, candidates, model, tf, support), threshold)
}

pub fn write_decisions_csv<W: Write>(decisions: &[MatchDecision], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["left_id", "right_id", "match_weight", "threshold"])?;
    for d in decisions {
        wtr.write_record([
            d.left.0.clone(),
            d.right.as_ref().map(|r| r.0.clone()).unwrap_or_default(),
            d.weight.map(|w| format!("{w:.6}")).unwrap_or_default(),
            format_threshold(d.threshold),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn format_threshold(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".into()
    } else if t == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{t:.6}")
    }
}

fn parse_threshold(s: &str) -> Option<f64> {
    match s {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

/// Read decisions written by [`write_decisions_csv`].
pub fn read_decisions_csv<R: std::io::Read>(r: R) -> Result<Vec<MatchDecision>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or("").trim();
        let bad = |what: &str| crate::error::Error::Schema(format!("decisions row {}: bad {what}", i + 2));
        let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());
        out.push(MatchDecision {
            left: RecordId(opt(field(0)).ok_or_else(|| bad("left_id"))?),
            right: opt(field(1)).map(RecordId),
            weight: match field(2) {
                "" => None,
                w => Some(w.parse().map_err(|_| bad("match_weight"))?),
            },
            threshold: parse_threshold(field(3)).ok_or_else(|| bad("threshold"))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decisions_round_trip() {
        let ds = vec![
            MatchDecision {
                left: RecordId("a".into()),
                right: Some(RecordId("b".into())),
                weight: Some(3.5),
                threshold: 1.25,
            },
            MatchDecision { left: RecordId("c".into()), right: None, weight: None, threshold: f64::NEG_INFINITY },
        ];
        let mut buf = Vec::new();
        write_decisions_csv(&ds, &mut buf).unwrap();
        assert_eq!(read_decisions_csv(buf.as_slice()).unwrap(), ds);
    }
}
