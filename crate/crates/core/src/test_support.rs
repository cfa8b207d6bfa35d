use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelDims, TrainingConfig};
use crate::model::Dlgan;
use crate::tensor::Tensor;

/// A configuration small enough for finite-difference checks.
pub fn tiny_config() -> TrainingConfig {
    TrainingConfig {
        window_len: 4,
        latent_dim: Some(3),
        patch_len: 2,
        patch_embed: 4,
        heads: 2,
        generator_heads: 1,
        trend_window: 3,
        encoder_layers: 2,
        decoder_layers: 2,
        summarizer_layers: 1,
        generator_layers: 1,
        discriminator2_layers: 2,
        batch_size: 4,
        epochs_autoencoder: 1,
        epochs_latent: 1,
        epochs_joint: 1,
        ..TrainingConfig::default()
    }
}


pub fn model(dims: ModelDims, seed: u64) -> Dlgan {
    Dlgan::new(dims, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Uniform entries strictly inside `(0, 1)`.
pub fn unit_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(0.05..0.95))
}
