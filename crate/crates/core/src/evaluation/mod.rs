//! Token consistency, MTWV, and end-to-end experiments over acoustic
//! conditions.

mod experiment;
mod metrics;

pub use experiment::{
    ground_truth, run_experiment, tokenize_tracks, Condition, ConditionReport, Experiment, Query, Report, TruthRecord,
};
pub use metrics::{mtwv, token_consistency, DetectionTrial, MtwvConfig, MtwvResult, TermStats};
