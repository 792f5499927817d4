//! Desk-scale training, evaluation, ablations and the noise sweep.

mod config;
mod data;
mod evaluate;
mod train;

pub use config::{LossConfig, OptimConfig, TrainConfig, DESK_LEARNING_RATE};
pub use data::{build_batch, DatasetProfile, Split, SplitSpec, ViewRef, WindowSampler};
pub use evaluate::{
    ablation_rows, evaluate, noise_sweep, par_map, run_ablation_suite, trend_holds, view_label, write_rows_csv,
    AblationRow, Aggregate, EvalReport, NoiseRow, NoiseSweep, ViewAggregate, NOISE_TREND_TOL,
};
pub use train::{
    clip_global_norm, global_norm, load_checkpoint, save_checkpoint, train, write_history_csv, AblationSpec, Adam,
    CheckpointMeta, HistoryRow, TrainOutcome,
};
