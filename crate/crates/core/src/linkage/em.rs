//! Unsupervised Fellegi-Sunter parameter estimation.

use std::collections::HashMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::comparison::ComparisonVector;

pub const PROB_FLOOR: f64 = 1e-9;
pub const LAMBDA_MIN: f64 = 1e-6;
pub const LAMBDA_MAX: f64 = 1.0 - 1e-6;

/// Distinct comparison vectors with multiplicities, in a canonical order so
/// that the fit does not depend on input order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatternCounts {
    pub n_columns: usize,
    pub patterns: Vec<(ComparisonVector, u64)>,
}

impl PatternCounts {
    pub fn from_vectors<I: IntoIterator<Item = ComparisonVector>>(n_columns: usize, vectors: I) -> Self {
        let mut map: HashMap<ComparisonVector, u64> = HashMap::new();
        for v in vectors {
            *map.entry(v).or_insert(0) += 1;
        }
        Self::from_map(n_columns, map)
    }

    pub fn from_map(n_columns: usize, map: HashMap<ComparisonVector, u64>) -> Self {
        let mut patterns: Vec<_> = map.into_iter().collect();
        patterns.sort_unstable();
        PatternCounts { n_columns, patterns }
    }

    pub fn total(&self) -> u64 {
        self.patterns.iter().map(|p| p.1).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

/// Floor every entry at [`PROB_FLOOR`] and rescale to sum to one.
pub fn floor_and_normalise(p: &mut [f64]) {
    for x in p.iter_mut() {
        *x = x.max(PROB_FLOOR);
    }
    let s: f64 = p.iter().sum();
    for x in p.iter_mut() {
        *x /= s;
    }
}

/// Level frequencies among random (mostly non-matching) pairs, per column.
pub fn estimate_u(random: &PatternCounts, n_levels: &[usize]) -> Vec<Vec<f64>> {
    let mut counts: Vec<Vec<f64>> = n_levels.iter().map(|&n| vec![0.0; n]).collect();
    for (v, n) in &random.patterns {
        for (c, level) in v.levels().enumerate() {
            if let Some(l) = level {
                counts[c][usize::from(l)] += *n as f64;
            }
        }
    }
    for col in &mut counts {
        let total: f64 = col.iter().sum();
        if total > 0.0 {
            for x in col.iter_mut() {
                *x /= total;
            }
        }
        floor_and_normalise(col);
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub lambda_init: f64,
    /// Keep `u` at its initial value (normally from [`estimate_u`]).
    pub fix_u: bool,
    /// Keep `m` at its initial value, so only λ is estimated.
    #[serde(default)]
    pub fix_m: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions { max_iterations: 200, tolerance: 1e-6, lambda_init: 0.1, fix_u: true, fix_m: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmFit {
    pub lambda: f64,
    pub m: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

/// Default `m` start: agreement levels favoured geometrically, strongest first.
pub fn default_m_init(n_levels: &[usize]) -> Vec<Vec<f64>> {
    n_levels
        .iter()
        .map(|&n| {
            let mut v: Vec<f64> = (0..n).map(|l| 0.5f64.powi(l as i32)).collect();
            floor_and_normalise(&mut v);
            v
        })
        .collect()
}

fn product(v: &ComparisonVector, p: &[Vec<f64>]) -> f64 {
    v.levels().enumerate().filter_map(|(c, l)| l.map(|l| p[c][usize::from(l)])).product()
}

fn max_delta(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// EM over pattern counts. Missing levels are skipped in both the likelihood
/// and the M-step. Returns the final parameters with a converged flag.
pub fn em_fit(counts: &PatternCounts, m_init: Vec<Vec<f64>>, u_init: Vec<Vec<f64>>, opts: &EmOptions) -> EmFit {
    let mut lambda = opts.lambda_init.clamp(LAMBDA_MIN, LAMBDA_MAX);
    let mut m = m_init;
    let mut u = u_init;
    let total = counts.total() as f64;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let mut m_acc: Vec<Vec<f64>> = m.iter().map(|c| vec![0.0; c.len()]).collect();
        let mut u_acc: Vec<Vec<f64>> = u.iter().map(|c| vec![0.0; c.len()]).collect();
        let mut r_sum = 0.0;
        for (v, n) in &counts.patterns {
            let pm = lambda * product(v, &m);
            let pu = (1.0 - lambda) * product(v, &u);
            let r = pm / (pm + pu);
            let n = *n as f64;
            r_sum += r * n;
            for (c, l) in v.levels().enumerate() {
                if let Some(l) = l {
                    m_acc[c][usize::from(l)] += r * n;
                    u_acc[c][usize::from(l)] += (1.0 - r) * n;
                }
            }
        }
        let new_lambda = (r_sum / total).clamp(LAMBDA_MIN, LAMBDA_MAX);
        let mut delta = (new_lambda - lambda).abs();
        if !opts.fix_m {
            for col in m_acc.iter_mut() {
                let s: f64 = col.iter().sum();
                if s > 0.0 {
                    col.iter_mut().for_each(|x| *x /= s);
                }
                floor_and_normalise(col);
            }
            delta = delta.max(max_delta(&m, &m_acc));
            m = m_acc;
        }
        if !opts.fix_u {
            for col in u_acc.iter_mut() {
                let s: f64 = col.iter().sum();
                if s > 0.0 {
                    col.iter_mut().for_each(|x| *x /= s);
                }
                floor_and_normalise(col);
            }
            delta = delta.max(max_delta(&u, &u_acc));
            u = u_acc;
        }
        lambda = new_lambda;
        if delta < opts.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("EM stopped after {iterations} iterations without converging");
    }
    EmFit { lambda, m, u, iterations, converged }
}
