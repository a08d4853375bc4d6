//! String comparators and minimal edit scripts.
//!
//! All comparisons work on Unicode scalar values. Callers are expected to pass
//! names through [`normalize_name`] first (trim, NFC, uppercase) so that two
//! spellings differing only in case or composition compare as identical.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Winkler prefix scale.
pub const PREFIX_SCALE: f64 = 0.1;
/// Longest common prefix rewarded by Jaro-Winkler.
pub const PREFIX_CAP: usize = 4;

/// Trim, NFC-compose and uppercase a raw name.
pub fn normalize_name(raw: &str) -> String {
    let composed: String = raw.trim().nfc().collect();
    let upper: String = composed.chars().flat_map(char::to_uppercase).collect();
    // uppercasing can decompose (e.g. U+0149), so recompose
    upper.nfc().collect()
}

pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

pub fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn jaro(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    jaro_chars(&a, &b)
}

pub fn jaro_chars(a: &[char], b: &[char]) -> f64 {
    let (la, lb) = (a.len(), b.len());
    if la == 0 && lb == 0 {
        return 1.0;
    }
    if la == 0 || lb == 0 {
        return 0.0;
    }
    let window = (la.max(lb) / 2).saturating_sub(1);
    let mut a_hit = vec![false; la];
    let mut b_hit = vec![false; lb];
    let mut matches = 0usize;
    for i in 0..la {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(lb);
        for j in lo..hi {
            if !b_hit[j] && a[i] == b[j] {
                a_hit[i] = true;
                b_hit[j] = true;
                matches += 1;
                break;
            }
        }
    }
    if matches == 0 {
        return 0.0;
    }
    let mut half_transpositions = 0usize;
    let mut bj = 0usize;
    for i in 0..la {
        if !a_hit[i] {
            continue;
        }
        while !b_hit[bj] {
            bj += 1;
        }
        if a[i] != b[bj] {
            half_transpositions += 1;
        }
        bj += 1;
    }
    let m = matches as f64;
    let t = half_transpositions as f64 / 2.0;
    (m / la as f64 + m / lb as f64 + (m - t) / m) / 3.0
}

pub fn jaro_winkler(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    jaro_winkler_chars(&a, &b)
}

pub fn jaro_winkler_chars(a: &[char], b: &[char]) -> f64 {
    let j = jaro_chars(a, b);
    let prefix = a.iter().zip(b).take(PREFIX_CAP).take_while(|(x, y)| x == y).count();
    j + prefix as f64 * PREFIX_SCALE * (1.0 - j)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Substitution,
    Deletion,
    Insertion,
}

/// One edit. `position` indexes the target string: for insertions and
/// substitutions it is the index of the produced character, for deletions it is
/// the number of target characters emitted before the deleted one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOp {
    pub kind: EditKind,
    pub position: usize,
    /// Inserted or substituted-in character; the removed character for deletions.
    pub ch: char,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditScript {
    pub ops: Vec<EditOp>,
}

impl EditScript {
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Replay the script on `source`.
    pub fn apply(&self, source: &str) -> String {
        let src: Vec<char> = source.chars().collect();
        let mut out: Vec<char> = Vec::with_capacity(src.len() + self.ops.len());
        let mut i = 0usize;
        for op in &self.ops {
            while out.len() < op.position && i < src.len() {
                out.push(src[i]);
                i += 1;
            }
            match op.kind {
                EditKind::Insertion => out.push(op.ch),
                EditKind::Substitution => {
                    out.push(op.ch);
                    i += 1;
                }
                EditKind::Deletion => i += 1,
            }
        }
        out.extend_from_slice(&src[i.min(src.len())..]);
        out.into_iter().collect()
    }

    /// Compact rendering used in audit files, e.g. `I2H;S4Y`.
    pub fn render(&self) -> String {
        self.ops
            .iter()
            .map(|op| {
                let k = match op.kind {
                    EditKind::Substitution => 'S',
                    EditKind::Deletion => 'D',
                    EditKind::Insertion => 'I',
                };
                format!("{k}{}{}", op.position, op.ch)
            })
            .collect::<Vec<_>>()
            .join(";")
    }
}

pub fn edit_script(a: &str, b: &str) -> EditScript {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    edit_script_chars(&a, &b)
}

/// Minimal edit script, traced left to right over a suffix-distance table.
/// At each step a free match is taken when available; otherwise the first
/// optimal move in the order substitution, deletion, insertion.
pub fn edit_script_chars(a: &[char], b: &[char]) -> EditScript {
    let (la, lb) = (a.len(), b.len());
    let w = lb + 1;
    // d[i * w + j] = distance between a[i..] and b[j..]
    let mut d = vec![0usize; (la + 1) * w];
    for i in (0..=la).rev() {
        for j in (0..=lb).rev() {
            d[i * w + j] = if i == la {
                lb - j
            } else if j == lb {
                la - i
            } else {
                let sub = d[(i + 1) * w + j + 1] + usize::from(a[i] != b[j]);
                sub.min(d[(i + 1) * w + j] + 1).min(d[i * w + j + 1] + 1)
            };
        }
    }

    let mut ops = Vec::with_capacity(d[0]);
    let (mut i, mut j) = (0usize, 0usize);
    while i < la || j < lb {
        let here = d[i * w + j];
        if i < la && j < lb && a[i] == b[j] {
            i += 1;
            j += 1;
        } else if i < la && j < lb && here == d[(i + 1) * w + j + 1] + 1 {
            ops.push(EditOp { kind: EditKind::Substitution, position: j, ch: b[j] });
            i += 1;
            j += 1;
        } else if i < la && here == d[(i + 1) * w + j] + 1 {
            ops.push(EditOp { kind: EditKind::Deletion, position: j, ch: a[i] });
            i += 1;
        } else {
            ops.push(EditOp { kind: EditKind::Insertion, position: j, ch: b[j] });
            j += 1;
        }
    }
    EditScript { ops }
}
