//! A small MLP with manual backprop, used to reproduce training-dynamics
//! experiments on synthetic data.

pub mod data;
pub mod knn;
pub mod network;
pub mod objective;
pub mod optim;
pub mod train;

pub use data::{make_synthetic_dataset, DatasetConfig, SyntheticDataset};
pub use knn::knn_accuracy;
pub use network::{cut_initialize, init_network, Activation, Gradients, LayerSpec, Mode, ToyNet};
pub use optim::{ema_update, MomentumSgd};
pub use train::{
    export_latent_2d, first_epoch_reaching, train, train_with_observer, ArchConfig, LatentSegment,
    MetricsRow, SslModel, TrainConfig, TrainMode,
};
