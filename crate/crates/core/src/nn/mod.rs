//! A small slimmable CNN trained with manual forward and backward passes.

pub mod data;
pub mod loss;
pub mod net;
pub mod optim;

pub use data::{gen_dataset, gen_splits, DataSplits, Dataset, DatasetConfig, Images};
pub use loss::{cross_entropy, kl_divergence, softmax, Loss};
pub use net::{backward, calibrate_bn, evaluate, forward, predict, BnStats, ChannelStats, Norm, SupernetState, Trace};
pub use optim::{cosine_lr, Sgd};
