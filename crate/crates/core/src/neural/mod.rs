//! Reverse-mode autodiff and the learned association network.

mod model;
mod tape;
mod train;

pub use model::{
    is_voxel_param, Bound, EdgeFeature, GnnConfig, GraphInput, NodeInput, Params, TrackerNet, EDGE_DIM,
    EDGE_FEATURE_DIM, NODE_DIM,
};
pub use tape::{sigmoid, Tape, Tensor, Var};
pub use train::{
    AdamState, Checkpoint, EpochLog, LabeledGraph, Stage, TrainSchedule, Trainer, CHECKPOINT_FORMAT_VERSION,
};
