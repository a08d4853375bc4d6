//! Name-structure features and the forename embedding built on them.
//!
//! A forename is summarised by 13 structural features. The features are
//! z-scored and rotated onto the leading eight principal axes of their
//! correlation matrix; candidate forenames are then compared by the distance
//! between their projections, bucketed by percentile cuts taken from genuine
//! within-person spelling changes.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const N_FEATURES: usize = 13;
pub const N_COMPONENTS: usize = 8;
/// Fewest discrepant pairs accepted by [`fit_thresholds`].
pub const MIN_THRESHOLD_PAIRS: usize = 100;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "hyphen",
    "apostrophe",
    "length_with_space",
    "length_without_space",
    "vowel_consonant_ratio",
    "longest_vowel_run",
    "unique_binary",
    "uniqueness_continuous",
    "number_of_terms",
    "middle_name_binary",
    "shared_trigram_count",
    "ends_with_vowel",
    "characters_per_term",
];

pub type Projection = [f64; N_COMPONENTS];

/// Frequency tables of the uncorrupted reference corpus.
#[derive(Debug, Clone, Default)]
pub struct CorpusStats {
    name_counts: HashMap<String, usize>,
    prefix_counts: HashMap<String, usize>,
    total: usize,
}

fn trigram(name: &str) -> String {
    name.chars().take(3).collect()
}

impl CorpusStats {
    pub fn from_names<'a, I: IntoIterator<Item = &'a str>>(names: I) -> Self {
        let mut stats = CorpusStats::default();
        for n in names.into_iter().filter(|n| !n.is_empty()) {
            *stats.name_counts.entry(n.to_string()).or_default() += 1;
            *stats.prefix_counts.entry(trigram(n)).or_default() += 1;
            stats.total += 1;
        }
        stats
    }

    pub fn count(&self, name: &str) -> usize {
        self.name_counts.get(name).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Records whose name starts with the same three characters, not counting
    /// one occurrence of the query itself.
    pub fn shared_trigram(&self, name: &str) -> usize {
        let n = self.prefix_counts.get(&trigram(name)).copied().unwrap_or(0);
        n - self.count(name).min(1).min(n)
    }

    pub fn relative_frequency(&self, name: &str) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(name) as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NameFeatureVector {
    pub hyphen: u8,
    pub apostrophe: u8,
    pub length_with_space: usize,
    pub length_without_space: usize,
    pub vowel_consonant_ratio: f64,
    pub longest_vowel_run: usize,
    pub unique_binary: u8,
    pub uniqueness_continuous: f64,
    pub number_of_terms: usize,
    pub middle_name_binary: u8,
    pub shared_trigram_count: usize,
    pub ends_with_vowel: u8,
    pub characters_per_term: f64,
}

impl NameFeatureVector {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            f64::from(self.hyphen),
            f64::from(self.apostrophe),
            self.length_with_space as f64,
            self.length_without_space as f64,
            self.vowel_consonant_ratio,
            self.longest_vowel_run as f64,
            f64::from(self.unique_binary),
            self.uniqueness_continuous,
            self.number_of_terms as f64,
            f64::from(self.middle_name_binary),
            self.shared_trigram_count as f64,
            f64::from(self.ends_with_vowel),
            self.characters_per_term,
        ]
    }
}

/// Vowel test on the base letter, so accented vowels count as vowels.
/// `Y` is a consonant.
fn is_vowel(c: char) -> bool {
    let base = std::iter::once(c).nfd().next().unwrap_or(c);
    matches!(base, 'A' | 'E' | 'I' | 'O' | 'U')
}

pub fn extract_features(name: &str, stats: &CorpusStats) -> Result<NameFeatureVector> {
    if !name.chars().any(char::is_alphabetic) {
        return Err(Error::EmptyName(name.to_string()));
    }
    let length_with_space = name.chars().count();
    let length_without_space = name.chars().filter(|c| !c.is_whitespace()).count();
    let number_of_terms = name.split_whitespace().count().max(1);

    let mut vowels = 0usize;
    let mut consonants = 0usize;
    let mut run = 0usize;
    let mut longest_run = 0usize;
    let mut last_alpha_vowel = false;
    for c in name.chars() {
        if !c.is_alphabetic() {
            run = 0;
            continue;
        }
        if is_vowel(c) {
            vowels += 1;
            run += 1;
            longest_run = longest_run.max(run);
            last_alpha_vowel = true;
        } else {
            consonants += 1;
            run = 0;
            last_alpha_vowel = false;
        }
    }

    let count = stats.count(name);
    Ok(NameFeatureVector {
        hyphen: u8::from(name.contains('-')),
        apostrophe: u8::from(name.contains('\'') || name.contains('\u{2019}')),
        length_with_space,
        length_without_space,
        vowel_consonant_ratio: vowels as f64 / consonants.max(1) as f64,
        longest_vowel_run: longest_run,
        unique_binary: u8::from(count == 1),
        uniqueness_continuous: 1.0 - stats.relative_frequency(name),
        number_of_terms,
        middle_name_binary: u8::from(number_of_terms >= 2),
        shared_trigram_count: stats.shared_trigram(name),
        ends_with_vowel: u8::from(last_alpha_vowel),
        characters_per_term: length_without_space as f64 / number_of_terms as f64,
    })
}

/// Standardised PCA of the feature corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub feature_means: Vec<f64>,
    pub feature_sds: Vec<f64>,
    /// Row-major, one row per feature, one column per component.
    pub loadings: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// decreasing order and each eigenvector oriented so that its
/// largest-magnitude entry is positive.
pub fn principal_axes(sym: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = sym.nrows();
    let eig = SymmetricEigen::new(sym.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let mut vectors = DMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (col, &k) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).clone_owned();
        let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(col, &v);
        values.push(eig.eigenvalues[k].max(0.0));
    }
    (values, vectors)
}

/// Sample covariance (n − 1 denominator) of row observations.
pub fn sample_covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    let mut means = vec![0.0; p];
    for r in rows {
        for (m, x) in means.iter_mut().zip(r) {
            *m += x;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut cov = DMatrix::zeros(p, p);
    for r in rows {
        for i in 0..p {
            let di = r[i] - means[i];
            for j in i..p {
                cov[(i, j)] += di * (r[j] - means[j]);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for i in 0..p {
        for j in i..p {
            cov[(i, j)] /= denom;
            cov[(j, i)] = cov[(i, j)];
        }
    }
    cov
}

pub fn fit_embedding(corpus: &[NameFeatureVector]) -> Result<EmbeddingModel> {
    let rows: Vec<[f64; N_FEATURES]> = corpus.iter().map(NameFeatureVector::to_array).collect();
    fit_embedding_rows(&rows)
}

/// PCA on raw feature rows; exposed for corpora built outside
/// [`extract_features`].
pub fn fit_embedding_rows(rows: &[[f64; N_FEATURES]]) -> Result<EmbeddingModel> {
    let mut distinct: Vec<[u64; N_FEATURES]> = rows.iter().map(|r| r.map(f64::to_bits)).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < N_FEATURES {
        // a single repeated vector is the common degenerate case
        if distinct.len() == 1 && !rows.is_empty() {
            return Err(Error::DegenerateFeature { index: 0, name: FEATURE_NAMES[0] });
        }
        return Err(Error::InsufficientPairs { required: N_FEATURES, found: distinct.len() });
    }

    let n = rows.len() as f64;
    let mut means = [0.0; N_FEATURES];
    for r in rows {
        for k in 0..N_FEATURES {
            means[k] += r[k];
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut sds = [0.0; N_FEATURES];
    for r in rows {
        for k in 0..N_FEATURES {
            sds[k] += (r[k] - means[k]).powi(2);
        }
    }
    for (k, sd) in sds.iter_mut().enumerate() {
        *sd = (*sd / (n - 1.0)).sqrt();
        if !(*sd > 1e-12 * means[k].abs().max(1.0)) {
            return Err(Error::DegenerateFeature { index: k, name: FEATURE_NAMES[k] });
        }
    }

    let z: Vec<Vec<f64>> = rows.iter().map(|r| (0..N_FEATURES).map(|k| (r[k] - means[k]) / sds[k]).collect()).collect();
    let corr = sample_covariance(&z);
    let (values, vectors) = principal_axes(&corr);

    let loadings = (0..N_FEATURES).map(|f| (0..N_COMPONENTS).map(|c| vectors[(f, c)]).collect()).collect();
    Ok(EmbeddingModel {
        feature_means: means.to_vec(),
        feature_sds: sds.to_vec(),
        loadings,
        explained_variance: values[..N_COMPONENTS].to_vec(),
    })
}

pub fn project(v: &NameFeatureVector, m: &EmbeddingModel) -> Projection {
    project_row(&v.to_array(), m)
}

pub fn project_row(row: &[f64; N_FEATURES], m: &EmbeddingModel) -> Projection {
    let mut out = [0.0; N_COMPONENTS];
    for f in 0..N_FEATURES {
        let z = (row[f] - m.feature_means[f]) / m.feature_sds[f];
        for (c, o) in out.iter_mut().enumerate() {
            *o += z * m.loadings[f][c];
        }
    }
    out
}

/// Euclidean norm of the componentwise absolute differences.
pub fn pc_distance(p: &Projection, q: &Projection) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs().powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PCDistanceThresholds {
    pub cut_p5: f64,
    pub cut_p10: f64,
    pub cut_p25: f64,
    pub cut_p50: f64,
}

impl PCDistanceThresholds {
    pub fn new(cut_p5: f64, cut_p10: f64, cut_p25: f64, cut_p50: f64) -> Result<Self> {
        let cuts = [cut_p5, cut_p10, cut_p25, cut_p50];
        let ok = cut_p5 > 0.0 && cuts.windows(2).all(|w| w[0] < w[1]) && cut_p50.is_finite();
        if !ok {
            return Err(Error::StrictOrderViolation(cuts.to_vec()));
        }
        Ok(PCDistanceThresholds { cut_p5, cut_p10, cut_p25, cut_p50 })
    }
}

/// Linear-interpolation percentile of sorted data (`p` in [0, 1]).
pub fn percentile_linear(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn thresholds_from_distances(distances: &[f64]) -> Result<PCDistanceThresholds> {
    if distances.len() < MIN_THRESHOLD_PAIRS {
        return Err(Error::InsufficientPairs { required: MIN_THRESHOLD_PAIRS, found: distances.len() });
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    PCDistanceThresholds::new(
        percentile_linear(&sorted, 0.05),
        percentile_linear(&sorted, 0.10),
        percentile_linear(&sorted, 0.25),
        percentile_linear(&sorted, 0.50),
    )
}

fn pair_projections(
    pairs: &[(String, String)],
    m: &EmbeddingModel,
    stats: &CorpusStats,
) -> Result<Vec<(Projection, Projection)>> {
    pairs
        .iter()
        .map(|(a, b)| {
            let pa = project(&extract_features(a, stats)?, m);
            let pb = project(&extract_features(b, stats)?, m);
            Ok((pa, pb))
        })
        .collect()
}

/// Percentile cuts of the embedding distance over within-person pairs.
pub fn fit_thresholds(
    pairs: &[(String, String)],
    m: &EmbeddingModel,
    stats: &CorpusStats,
) -> Result<PCDistanceThresholds> {
    if pairs.len() < MIN_THRESHOLD_PAIRS {
        return Err(Error::InsufficientPairs { required: MIN_THRESHOLD_PAIRS, found: pairs.len() });
    }
    let d: Vec<f64> = pair_projections(pairs, m, stats)?.iter().map(|(p, q)| pc_distance(p, q)).collect();
    thresholds_from_distances(&d)
}

/// One set of cuts per component, on |Δ PCk|.
pub fn fit_component_thresholds(
    pairs: &[(String, String)],
    m: &EmbeddingModel,
    stats: &CorpusStats,
) -> Result<Vec<PCDistanceThresholds>> {
    if pairs.len() < MIN_THRESHOLD_PAIRS {
        return Err(Error::InsufficientPairs { required: MIN_THRESHOLD_PAIRS, found: pairs.len() });
    }
    let proj = pair_projections(pairs, m, stats)?;
    (0..N_COMPONENTS)
        .map(|c| {
            let d: Vec<f64> = proj.iter().map(|(p, q)| (p[c] - q[c]).abs()).collect();
            thresholds_from_distances(&d)
        })
        .collect()
}

/// Ordinal agreement level: 4 is closest, 0 is beyond the median cut.
pub fn discretise(d: f64, t: &PCDistanceThresholds) -> u8 {
    if d < t.cut_p5 {
        4
    } else if d < t.cut_p10 {
        3
    } else if d < t.cut_p25 {
        2
    } else if d < t.cut_p50 {
        1
    } else {
        0
    }
}

/// Serialised embedding: model plus fitted cuts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingDocument {
    pub model: EmbeddingModel,
    pub thresholds: PCDistanceThresholds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component_thresholds: Option<Vec<PCDistanceThresholds>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn stats() -> CorpusStats {
        CorpusStats::from_names(["ANNA", "ANNA", "ANNE-MARIE", "MARY JO", "MARIA"])
    }

    #[test]
    fn feature_examples() {
        let s = stats();
        let v = extract_features("MARY JO", &s).unwrap();
        assert_eq!(v.number_of_terms, 2);
        assert_eq!(v.length_with_space, 7);
        assert_eq!(v.length_without_space, 6);
        assert_eq!(v.characters_per_term, 3.0);
        assert_eq!(v.middle_name_binary, 1);

        let v = extract_features("ANNA", &s).unwrap();
        assert_eq!(v.vowel_consonant_ratio, 1.0);
        assert_eq!(v.ends_with_vowel, 1);
        assert_eq!(v.longest_vowel_run, 1);
        assert_eq!(v.unique_binary, 0);
        assert!((v.uniqueness_continuous - 0.6).abs() < 1e-12);

        let v = extract_features("ANNE-MARIE", &s).unwrap();
        assert_eq!((v.hyphen, v.apostrophe), (1, 0));
        assert_eq!(v.unique_binary, 1);
        // ANNA x2 and ANNE-MARIE share "ANN"; one own occurrence excluded
        assert_eq!(v.shared_trigram_count, 2);

        assert!(matches!(extract_features("--", &s), Err(Error::EmptyName(_))));
        let v = extract_features("O'NEIL", &s).unwrap();
        assert_eq!(v.apostrophe, 1);
        assert_eq!(extract_features("LOUISE", &s).unwrap().longest_vowel_run, 3);
    }

    fn random_rows(n: usize, seed: u64) -> Vec<[f64; N_FEATURES]> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let base: f64 = rng.gen_range(0.0..3.0);
                let mut r = [0.0; N_FEATURES];
                for (k, x) in r.iter_mut().enumerate() {
                    *x = rng.gen_range(0.0..1.0) + if k < 4 { base } else { 0.0 };
                }
                r
            })
            .collect()
    }

    #[test]
    fn identical_vectors_are_degenerate() {
        let rows = vec![[1.0; N_FEATURES]; 50];
        assert!(matches!(fit_embedding_rows(&rows), Err(Error::DegenerateFeature { .. })));
        let mut rows = random_rows(40, 1);
        for r in &mut rows {
            r[6] = 0.0;
        }
        assert!(matches!(fit_embedding_rows(&rows), Err(Error::DegenerateFeature { index: 6, .. })));
    }

    #[test]
    fn loadings_are_orthonormal_and_sorted() {
        let m = fit_embedding_rows(&random_rows(500, 2)).unwrap();
        for i in 0..N_COMPONENTS {
            for j in 0..N_COMPONENTS {
                let dot: f64 = (0..N_FEATURES).map(|f| m.loadings[f][i] * m.loadings[f][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10, "({i},{j}) {dot}");
            }
            let col_max =
                (0..N_FEATURES).map(|f| m.loadings[f][i]).fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            assert!(col_max > 0.0);
        }
        assert!(m.explained_variance.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn correlated_pair_loads_equally_on_pc1() {
        // two perfectly correlated features among independent jitter:
        // PC1 of the correlation matrix is (1/√2, 1/√2, 0, ...)
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<[f64; N_FEATURES]> = (0..4000)
            .map(|i| {
                let mut r = [0.0; N_FEATURES];
                r[0] = (i % 4) as f64;
                r[1] = (i % 4) as f64;
                for x in r.iter_mut().skip(2) {
                    *x = rng.gen_range(-1e-3..1e-3);
                }
                r
            })
            .collect();
        let m = fit_embedding_rows(&rows).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.loadings[0][0] - h).abs() < 0.01, "{}", m.loadings[0][0]);
        assert!((m.loadings[1][0] - h).abs() < 0.01);
        assert!((m.explained_variance[0] - 2.0).abs() < 0.05);
    }

    #[test]
    fn projection_identities() {
        let rows = random_rows(300, 4);
        let m = fit_embedding_rows(&rows).unwrap();
        let means: [f64; N_FEATURES] = m.feature_means.clone().try_into().unwrap();
        assert!(project_row(&means, &m).iter().all(|x| x.abs() < 1e-12));

        let scores: Vec<Vec<f64>> = rows.iter().map(|r| project_row(r, &m).to_vec()).collect();
        let cov = sample_covariance(&scores);
        for c in 0..N_COMPONENTS {
            assert!((cov[(c, c)] - m.explained_variance[c]).abs() < 1e-8);
        }
        // a second PCA of the scores is a no-op rotation
        let (again, _) = principal_axes(&cov);
        for c in 0..N_COMPONENTS {
            assert!((again[c] - m.explained_variance[c]).abs() < 1e-8);
        }
    }

    #[test]
    fn distance_examples() {
        let z = [0.0; N_COMPONENTS];
        let mut p = z;
        assert_eq!(pc_distance(&z, &z), 0.0);
        p[0] = 1.0;
        assert_eq!(pc_distance(&p, &z), 1.0);
        p[0] = 3.0;
        p[1] = 4.0;
        assert_eq!(pc_distance(&p, &z), 5.0);
    }

    #[test]
    fn threshold_examples() {
        let d: Vec<f64> = (1..=100).map(f64::from).collect();
        let t = thresholds_from_distances(&d).unwrap();
        for (got, want) in [t.cut_p5, t.cut_p10, t.cut_p25, t.cut_p50].iter().zip([5.95, 10.9, 25.75, 50.5]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert!(matches!(thresholds_from_distances(&[2.0; 150]), Err(Error::StrictOrderViolation(_))));
        assert!(matches!(thresholds_from_distances(&[1.0; 99]), Err(Error::InsufficientPairs { .. })));
        // zero distances enter the percentiles like any other value
        let mut d: Vec<f64> = (1..=100).map(f64::from).collect();
        d[0] = 0.0;
        let t = thresholds_from_distances(&d).unwrap();
        assert!((t.cut_p5 - 5.95).abs() < 1e-12);
    }

    #[test]
    fn discretise_examples() {
        let t = PCDistanceThresholds::new(1.0, 2.0, 3.0, 4.0).unwrap();
        assert_eq!(discretise(0.0, &t), 4);
        assert_eq!(discretise(4.0, &t), 0);
        assert_eq!(discretise(2.5, &t), 2);
        assert_eq!(discretise(1.0, &t), 3);
    }

    proptest! {
        #[test]
        fn discretise_is_monotone(a in 0.0f64..10.0, b in 0.0f64..10.0) {
            let t = PCDistanceThresholds::new(1.0, 2.0, 3.0, 4.0).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(discretise(lo, &t) >= discretise(hi, &t));
        }

        #[test]
        fn features_are_consistent(name in "[A-Z]{1,6}( [A-Z]{1,5})?(-[A-Z]{2,4})?") {
            let s = stats();
            let v = extract_features(&name, &s).unwrap();
            prop_assert!(v.length_with_space >= v.length_without_space);
            prop_assert_eq!(
                v.characters_per_term,
                v.length_without_space as f64 / v.number_of_terms as f64
            );
            prop_assert_eq!(v, extract_features(&name, &s).unwrap());
        }
    }
}
