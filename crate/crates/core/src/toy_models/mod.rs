//! Desk-scale stand-ins for the face-recognition backbones: dense encoders
//! with exact backpropagation, a cosine-margin classification head, a
//! synthetic identities-on-a-hypersphere dataset and the SGD machinery.

mod dataset;
mod head;
mod network;
mod optim;

pub use dataset::{generate_dataset, Dataset, SyntheticDatasetSpec};
pub use head::{fr_margin_loss, FrHeadParams, FrLoss, MarginHead};
pub use network::{Activation, DenseNetSpec, ForwardCache, Layer, NetworkGrads, NetworkState};
pub use optim::{sgd_momentum_step, step_decay_lr, DEFAULT_MOMENTUM};
