//! Repeated-split experiments, tuning, synthetic data and reports.

mod experiment;
mod image;
mod oracle;
mod report;
mod splits;
mod synthetic;
mod tuning;

pub use experiment::{
    evaluate_split, fixed_snaps, run_experiment, run_experiment_with_knn, xi_for_seed, BaseScore,
    ExperimentConfig, Method, Protocol, ScoreContext,
};
pub use image::{
    run_image_experiment, run_image_trial, run_image_trial_keyed, ImageConfig, ImageData,
    ImageOutcome,
};
pub use oracle::{run_oracle_experiment, OracleConfig};
pub use report::{Aggregate, ConfigEcho, ReportConfig, Stat, TrialRecord, TrialReport};
pub use splits::{
    sample_model_split, sample_splits, split_pool, CalibRule, ModelSplit, SplitIndices,
    NODES_PER_CLASS,
};
pub use synthetic::{generate_synthetic, SynthConfig};
pub use tuning::{raps_grid, snaps_grid, tune_raps, tune_snaps, tuning_halves, Hyperparams};
