//! CPU implementation of the stage-wise refinement network.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod ops;
pub mod pca;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use model::{
    atrous_pool, backward, coarse_head, encode, forward, fuse, gate_unit, map_loss, refine_stage,
    scm, stack_loss, subitize, subitize_backward, subitize_forward, subitize_loss, total_loss,
    ForwardTrace, LossBreakdown, NetConfig, NetworkParams, StagePrediction, Targets,
};
pub use pca::{pca_visualize, PcaImage};
pub use tensor::{Scalar, Tensor};
pub use train::{
    batch_gradient, predict, subitize_confidences, train, train_from, train_subitizer,
    write_training_log, CountSample, EpochLog, OptimizerKind, Prediction, Sample, TrainConfig,
    TrainResult,
};
