//! Training configuration and the resolved model geometry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every tunable of a training run. Serialized as flat TOML.
///
/// Fields left as `None` are derived from the feature count when the
/// configuration is resolved against a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Window length T.
    pub window_len: usize,
    pub stride: usize,
    /// Latent width N; defaults to `min(4·M, 24)`.
    pub latent_dim: Option<usize>,
    /// Temporal feature vector width F; defaults to N.
    pub feature_dim: Option<usize>,
    /// Patch length p; T must be a multiple of it.
    pub patch_len: usize,
    /// Patch embedding width e.
    pub patch_embed: usize,
    /// Heads of the extractor's temporal and channel attention.
    pub heads: usize,
    /// Heads of the generator's transformer blocks.
    pub generator_heads: usize,
    /// Moving-average window for the trend branch (odd).
    pub trend_window: usize,
    /// Noise length L_z; defaults to T.
    pub noise_len: Option<usize>,
    /// Noise width D_z; defaults to N.
    pub noise_dim: Option<usize>,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub summarizer_layers: usize,
    pub generator_layers: usize,
    pub discriminator2_layers: usize,
    pub lr_pretrain: f64,
    pub lr_joint: f64,
    pub batch_size: usize,
    pub epochs_autoencoder: usize,
    pub epochs_latent: usize,
    pub epochs_joint: usize,
    pub seed: u64,
    /// Replace patching and attention with a plain recurrent summarizer.
    pub no_extractor: bool,
    /// Feed per-step sequences to Generator₂ instead of a bottleneck vector.
    pub no_reconstructor: bool,
    /// Apply `1/√d` inside the generator's cross-attention.
    pub scale_cross_attention: bool,
    /// Label Ĥ^Real as real (instead of fake) for Discriminator₂.
    pub d2_reconstruction_as_real: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            window_len: 24,
            stride: 1,
            latent_dim: None,
            feature_dim: None,
            patch_len: 4,
            patch_embed: 16,
            heads: 4,
            generator_heads: 4,
            trend_window: 5,
            noise_len: None,
            noise_dim: None,
            encoder_layers: 3,
            decoder_layers: 3,
            summarizer_layers: 2,
            generator_layers: 2,
            discriminator2_layers: 2,
            lr_pretrain: 1e-3,
            lr_joint: 2e-4,
            batch_size: 128,
            epochs_autoencoder: 50,
            epochs_latent: 50,
            epochs_joint: 50,
            seed: 7,
            no_extractor: false,
            no_reconstructor: false,
            scale_cross_attention: false,
            d2_reconstruction_as_real: false,
        }
    }
}

/// Ablation switches of the architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoExtractor,
    NoReconstructor,
    All,
}

impl Ablation {
    pub const ALL_VARIANTS: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoExtractor,
        Ablation::NoReconstructor,
        Ablation::All,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoExtractor => "no_extractor",
            Ablation::NoReconstructor => "no_reconstructor",
            Ablation::All => "all",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "full" | "none" => Ok(Ablation::Full),
            "no_extractor" => Ok(Ablation::NoExtractor),
            "no_reconstructor" => Ok(Ablation::NoReconstructor),
            "all" => Ok(Ablation::All),
            other => Err(format!(
                "unknown ablation `{other}` (expected no_extractor, no_reconstructor or all)"
            )),
        }
    }
}

/// Concrete layer sizes for one dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    /// M
    pub features: usize,
    /// T
    pub window: usize,
    /// N
    pub latent: usize,
    /// F
    pub feature_vec: usize,
    /// p
    pub patch_len: usize,
    /// P = T / p
    pub patches: usize,
    /// e
    pub patch_embed: usize,
    pub heads: usize,
    pub generator_heads: usize,
    pub trend_window: usize,
    /// L_z
    pub noise_len: usize,
    /// D_z
    pub noise_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub summarizer_layers: usize,
    pub generator_layers: usize,
    pub discriminator2_layers: usize,
    pub no_extractor: bool,
    pub no_reconstructor: bool,
    pub scale_cross_attention: bool,
}

impl TrainingConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn ablation(&self) -> Ablation {
        match (self.no_extractor, self.no_reconstructor) {
            (false, false) => Ablation::Full,
            (true, false) => Ablation::NoExtractor,
            (false, true) => Ablation::NoReconstructor,
            (true, true) => Ablation::All,
        }
    }

    pub fn set_ablation(&mut self, ablation: Ablation) {
        self.no_extractor = matches!(ablation, Ablation::NoExtractor | Ablation::All);
        self.no_reconstructor = matches!(ablation, Ablation::NoReconstructor | Ablation::All);
    }

    /// Fills every derived field for a dataset with `features` columns.
    pub fn resolved(&self, features: usize) -> Result<Self> {
        let mut c = self.clone();
        let n = c.latent_dim.unwrap_or_else(|| (4 * features).min(24));
        c.latent_dim = Some(n);
        c.feature_dim = Some(c.feature_dim.unwrap_or(n));
        c.noise_len = Some(c.noise_len.unwrap_or(c.window_len));
        c.noise_dim = Some(c.noise_dim.unwrap_or(n));
        c.dims(features)?;
        Ok(c)
    }

    /// Validates the configuration and computes layer sizes.
    pub fn dims(&self, features: usize) -> Result<ModelDims> {
        let positive = |field: &'static str, v: usize| {
            if v == 0 {
                Err(Error::config(field, "must be at least 1"))
            } else {
                Ok(v)
            }
        };
        if features == 0 {
            return Err(Error::config("features", "dataset has no features"));
        }
        if self.window_len < 2 {
            return Err(Error::config("window_len", "must be at least 2"));
        }
        positive("stride", self.stride)?;
        positive("patch_len", self.patch_len)?;
        if self.window_len % self.patch_len != 0 {
            return Err(Error::config("patch_len", "T not divisible by p"));
        }
        positive("patch_embed", self.patch_embed)?;
        positive("heads", self.heads)?;
        positive("generator_heads", self.generator_heads)?;
        if self.patch_embed % self.heads != 0 {
            return Err(Error::config("heads", "patch_embed not divisible by heads"));
        }
        for (f, v) in [
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("summarizer_layers", self.summarizer_layers),
            ("generator_layers", self.generator_layers),
            ("discriminator2_layers", self.discriminator2_layers),
            ("batch_size", self.batch_size),
            ("epochs_autoencoder", self.epochs_autoencoder),
            ("epochs_latent", self.epochs_latent),
            ("epochs_joint", self.epochs_joint),
        ] {
            positive(f, v)?;
        }
        for (f, v) in [("lr_pretrain", self.lr_pretrain), ("lr_joint", self.lr_joint)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(f, "must be a positive finite rate"));
            }
        }
        let latent = positive("latent_dim", self.latent_dim.unwrap_or_else(|| (4 * features).min(24)))?;
        let feature_vec = positive("feature_dim", self.feature_dim.unwrap_or(latent))?;
        let noise_len = positive("noise_len", self.noise_len.unwrap_or(self.window_len))?;
        let noise_dim = positive("noise_dim", self.noise_dim.unwrap_or(latent))?;
        if noise_dim % self.generator_heads != 0 {
            return Err(Error::config(
                "generator_heads",
                format!("noise width {noise_dim} not divisible by {} heads", self.generator_heads),
            ));
        }
        if self.trend_window % 2 == 0 || self.trend_window > noise_len {
            return Err(Error::config(
                "trend_window",
                format!("must be odd and at most the noise length {noise_len}"),
            ));
        }
        if self.no_reconstructor && noise_len != self.window_len {
            return Err(Error::config(
                "noise_len",
                "the no_reconstructor ablation needs noise_len == window_len",
            ));
        }
        Ok(ModelDims {
            features,
            window: self.window_len,
            latent,
            feature_vec,
            patch_len: self.patch_len,
            patches: self.window_len / self.patch_len,
            patch_embed: self.patch_embed,
            heads: self.heads,
            generator_heads: self.generator_heads,
            trend_window: self.trend_window,
            noise_len,
            noise_dim,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            summarizer_layers: self.summarizer_layers,
            generator_layers: self.generator_layers,
            discriminator2_layers: self.discriminator2_layers,
            no_extractor: self.no_extractor,
            no_reconstructor: self.no_reconstructor,
            scale_cross_attention: self.scale_cross_attention,
        })
    }
}
