//! Curriculum training, exact-match evaluation and metric persistence.

pub mod curriculum;
pub mod eval;
pub mod metrics;
pub mod train;

pub use curriculum::Curriculum;
pub use eval::{evaluate_exact_match, report_top3, EvalRecord, LengthAccuracy, Predictor, Top3};
pub use train::{train, Checkpoint, RunOptions, TrainConfig, TrainData, TrainOutcome};
