//! Configuration, ingestion, synthetic data and end-to-end orchestration.

pub mod config;
pub mod ingest;
pub mod run;
pub mod synth;

pub use config::RunConfig;
pub use ingest::{ingest, ingest_reader, write_dataset, write_dataset_file, ColumnMap};
pub use run::{execute, run_all, stage1, write_reports, RunReport, Stage1};
pub use synth::{drift_snapshot, synth_corpus, SynthSpec};
