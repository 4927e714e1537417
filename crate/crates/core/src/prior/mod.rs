//! Learned map prior: a U-Net map encoder and an LSTM odometry encoder whose
//! outputs are combined by a per-cell dot product.

mod model;
mod train;

pub use model::{forward, map_input, score, window_inputs, DeepMapTensor, ModelConfig, PriorModel};
pub use train::{
    augment_window, batch_loss, train, Batch, EpochLoss, TrainConfig, TrainReport, WindowDataset,
};
