//! Convolutional autoencoder: seven strided convolutions and a linear
//! bottleneck on the way in, a linear layer and five convolution /
//! transposed-convolution pairs on the way out.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{AeConfig, Geometry, DECODER_PAIRS, ENCODER_CONVS};
pub use model::{AeModel, EmbeddingMatrix, LossHistory};
