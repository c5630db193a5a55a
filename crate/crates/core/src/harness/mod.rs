//! Training orchestration, ablation ladder, metric logs and checkpoints.

mod ablate;
mod checkpoint;
mod config;
mod log;
mod train;

pub use ablate::{ablate, ablation_ladder, render_ablation_table, AblationRow};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::TrainConfig;
pub use log::{
    render_metric_log, write_metric_log, AgreementStep, DisagreementStep, EnsembleStep, StepRecord,
};
pub use train::{evaluate, prepare_data, train, EvalHead, RunReport, TrainedModel};
