//! Name-discrepancy profiling, realistic corruption and probabilistic record
//! linkage with per-group error-rate evaluation.

pub mod corruption;
pub mod error;
pub mod evaluation;
pub mod linkage;
pub mod name_features;
pub mod pipeline;
pub mod profiler;
pub mod record;
pub mod rng;
pub mod string_metrics;

pub use error::{Error, Result};
pub use record::{Dataset, NameField, PersonRecord, RecordId};
