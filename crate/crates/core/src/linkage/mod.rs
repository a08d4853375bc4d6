//! Blocking, comparison, EM estimation and best-match linkage.

pub mod blocking;
pub mod comparison;
pub mod em;
pub mod link;
pub mod model;

pub use blocking::{block, default_rules, BlockField, BlockingRule, Candidates, KeyPart};
pub use comparison::{
    compare, ColumnSpec, Comparator, ComparisonSpec, ComparisonVector, EmbeddingSupport, LevelConfig, ModelFamily,
};
pub use em::{em_fit, estimate_u, EmFit, EmOptions, PatternCounts};
pub use link::{decide, link, read_decisions_csv, score_best, write_decisions_csv, BestCandidate, MatchDecision};
pub use model::{fit_model, FitOptions, LinkageModel, TfTables};
