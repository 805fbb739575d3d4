//! The masked video transformer: architecture, objectives, checkpoints and
//! training.

mod checkpoint;
mod config;
mod kernels;
pub mod linalg;
mod loss;
mod params;
mod train;
mod transformer;

pub use checkpoint::Checkpoint;
pub use config::TransformerConfig;
pub use loss::{msm_loss, pair_bce, rel_loss, total_loss, vid_loss, LossBreakdown, TrainExample};
pub use params::{init_params, BlockSlots, Layout, TensorInfo};
pub use train::{
    build_batch, prepare_items, read_metrics, train, train_from, Adam, LrSchedule, MetricRecord, TrainConfig, TrainItem,
    TrainOutcome, TrainOutputs,
};
pub use transformer::{init_model, AttentionMap, AttentionScopeMask, Model, Predictor, PredictorOutput};
