//! Training, evaluation, and multi-stage experiments.

mod eval;
mod experiment;
mod manifest;
mod train;

pub use eval::{evaluate, predictions, ClassCounts, EvalReport};
pub use experiment::{
    cnn_teacher, mean_std, run_experiment, run_plan, teacher_stream, Cell, ExperimentConfig, ExperimentData, ResultRow,
    ResultTable, Stage, StudentLoss, TeacherCache, TrainedModel,
};
pub use manifest::Manifest;
pub use train::{train, EpochRecord, History, TrainConfig, TrainTargets};
