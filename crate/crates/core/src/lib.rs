//! Dual-layer generative adversarial network for multivariate time-series
//! synthesis.
//!
//! Windows of a normalized series are compressed by a recurrent autoencoder
//! into hidden sequences. A patch-attention extractor condenses each hidden
//! sequence into a temporal feature vector. The first GAN layer learns to
//! generate feature vectors from noise; the second learns to rebuild hidden
//! sequences from feature vectors. Decoding a rebuilt sequence yields a
//! synthetic window.

pub mod autoencoder;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod extractor;
pub mod gradcheck;
pub mod graph;
pub mod latent_gan;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod reconstructor;
pub mod sine;
pub mod tensor;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use config::{Ablation, TrainingConfig};
pub use error::{Error, Result};
pub use model::Dlgan;
pub use trainer::Trainer;

#[cfg(test)]
pub(crate) mod test_support;
