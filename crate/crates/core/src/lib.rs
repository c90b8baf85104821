// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autoencoder;
pub mod dataio;
pub mod error;
pub mod pca;
pub mod pipeline;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
