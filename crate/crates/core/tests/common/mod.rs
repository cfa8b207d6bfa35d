//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use dlgan::autoencoder::reconstruction_loss;
use dlgan::data::{prepare, stack_windows, NormStats, TimeSeriesWindow};
use dlgan::gradcheck::{check_param_gradients, GradCheckReport};
use dlgan::graph::{Graph, Var};
use dlgan::latent_gan::sample_noise;
use dlgan::params::{Component, ParamId, ParamStore};
use dlgan::sine::make_sine;
use dlgan::tensor::Tensor;
use dlgan::trainer::{gan_loss_graph, GanSide, LossRecord, SubSteps};
use dlgan::{Dlgan, Trainer, TrainingConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-3;
const GRAD_BATCH: usize = 3;
const GRAD_FEATURES: usize = 2;

/// T = 4, N = 3 model with randomized (non-zero) discriminator heads.
pub fn grad_model(no_extractor: bool, no_reconstructor: bool) -> Dlgan {
    let cfg = TrainingConfig {
        window_len: 4,
        latent_dim: Some(3),
        patch_len: 2,
        patch_embed: 4,
        heads: 2,
        generator_heads: 1,
        trend_window: 3,
        encoder_layers: 1,
        decoder_layers: 1,
        summarizer_layers: 1,
        generator_layers: 1,
        discriminator2_layers: 1,
        no_extractor,
        no_reconstructor,
        ..TrainingConfig::default()
    }
    .resolved(GRAD_FEATURES)
    .unwrap();
    let mut model = Dlgan::new(cfg.dims(GRAD_FEATURES).unwrap(), &mut ChaCha8Rng::seed_from_u64(3));
    // Zero-initialized heads would hide every gradient behind them.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let heads: Vec<ParamId> = model
        .store
        .ids()
        .filter(|&id| model.store.entry(id).name.contains(".head"))
        .collect();
    for id in heads {
        for v in model.store.get_mut(id).data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    model
}

fn grad_inputs(model: &Dlgan) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = model.dims.window;
    let x = Tensor::from_fn(&[GRAD_BATCH, t, GRAD_FEATURES], |_| rng.random_range(0.05..0.95));
    let (lz, dz) = model.noise_shape();
    (x, sample_noise(GRAD_BATCH, lz, dz, &mut rng))
}

struct Paths {
    h: Var,
    real_embedding: Var,
    fake_embedding: Var,
    h_hat_real: Var,
    h_hat_fake: Var,
}

fn forward(model: &Dlgan, g: &mut Graph, x: &Tensor, z: &Tensor) -> Paths {
    let xv = g.input(x.clone());
    let zv = g.input(z.clone());
    let h = model.autoencoder.encode(g, xv).unwrap();
    let extracted = model.extractor.forward(g, h).unwrap();
    let h_hat_real = model.reconstruct_real(g, &extracted, h).unwrap();
    let generated = model.generator1.forward(g, zv).unwrap();
    let h_hat_fake = model.reconstruct_fake(g, &generated).unwrap();
    Paths {
        h,
        real_embedding: extracted.embedding,
        fake_embedding: generated.embedding,
        h_hat_real,
        h_hat_fake,
    }
}

pub fn check_autoencoder_loss(model: &Dlgan) -> GradCheckReport {
    let (x, _) = grad_inputs(model);
    let ids = model.store.ids_of(&[Component::Encoder, Component::Decoder]);
    check_param_gradients(&model.store, &ids, GRAD_STEP, |g| {
        let xv = g.input(x.clone());
        let h = model.autoencoder.encode(g, xv).unwrap();
        let x_hat = model.autoencoder.decode(g, h).unwrap();
        reconstruction_loss(g, xv, x_hat).unwrap()
    })
}

pub fn check_latent_loss(model: &Dlgan) -> GradCheckReport {
    let (x, _) = grad_inputs(model);
    let ids = model
        .store
        .ids_of(&[Component::Encoder, Component::Extractor, Component::Generator2]);
    check_param_gradients(&model.store, &ids, GRAD_STEP, |g| {
        let xv = g.input(x.clone());
        let h = model.autoencoder.encode(g, xv).unwrap();
        let extracted = model.extractor.forward(g, h).unwrap();
        let h_hat = model.reconstruct_real(g, &extracted, h).unwrap();
        reconstruction_loss(g, h, h_hat).unwrap()
    })
}

pub fn check_generator_gan_loss(model: &Dlgan) -> GradCheckReport {
    let (x, z) = grad_inputs(model);
    let ids = model
        .store
        .ids_of(&[Component::Generator1, Component::Generator2, Component::Extractor]);
    check_param_gradients(&model.store, &ids, GRAD_STEP, |g| {
        let p = forward(model, g, &x, &z);
        let y1 = model.discriminator1.forward(g, p.fake_embedding).unwrap();
        let y2_fake = model.discriminator2.forward(g, p.h_hat_fake).unwrap();
        let y2_hat = model.discriminator2.forward(g, p.h_hat_real).unwrap();
        let a = gan_loss_graph(g, &[], &[y1], GanSide::Generator).unwrap();
        let b = gan_loss_graph(g, &[], &[y2_fake, y2_hat], GanSide::Generator).unwrap();
        g.add(a, b)
    })
}

pub fn check_discriminator_gan_loss(model: &Dlgan) -> GradCheckReport {
    let (x, z) = grad_inputs(model);
    let ids = model
        .store
        .ids_of(&[Component::Discriminator1, Component::Discriminator2]);
    check_param_gradients(&model.store, &ids, GRAD_STEP, |g| {
        let p = forward(model, g, &x, &z);
        let y1_real = model.discriminator1.forward(g, p.real_embedding).unwrap();
        let y1_fake = model.discriminator1.forward(g, p.fake_embedding).unwrap();
        let y2_real = model.discriminator2.forward(g, p.h).unwrap();
        let y2_hat = model.discriminator2.forward(g, p.h_hat_real).unwrap();
        let y2_fake = model.discriminator2.forward(g, p.h_hat_fake).unwrap();
        let a = gan_loss_graph(g, &[y1_real], &[y1_fake], GanSide::Discriminator).unwrap();
        let b = gan_loss_graph(g, &[y2_real], &[y2_hat, y2_fake], GanSide::Discriminator).unwrap();
        g.add(a, b)
    })
}

/// Small but complete configuration for fast end-to-end training.
pub fn small_config() -> TrainingConfig {
    TrainingConfig {
        window_len: 6,
        latent_dim: Some(4),
        patch_len: 2,
        patch_embed: 4,
        heads: 2,
        generator_heads: 2,
        trend_window: 3,
        encoder_layers: 1,
        decoder_layers: 1,
        summarizer_layers: 1,
        generator_layers: 1,
        discriminator2_layers: 1,
        batch_size: 8,
        epochs_autoencoder: 2,
        epochs_latent: 2,
        epochs_joint: 2,
        seed: 11,
        ..TrainingConfig::default()
    }
}

pub const SMALL_FEATURES: usize = 3;

pub fn small_data(cfg: &TrainingConfig) -> (NormStats, Vec<String>, Vec<TimeSeriesWindow>) {
    let raw = make_sine(40, SMALL_FEATURES, 5);
    let (stats, windows) = prepare(&raw, cfg.window_len, 1).unwrap();
    (stats, raw.feature_names, windows)
}

pub fn small_trainer(cfg: &TrainingConfig) -> (Trainer, Vec<TimeSeriesWindow>) {
    let (stats, names, windows) = small_data(cfg);
    (Trainer::new(cfg, stats, names).unwrap(), windows)
}

pub fn batch_and_noise(t: &Trainer, windows: &[TimeSeriesWindow]) -> (Tensor, Tensor) {
    let x = stack_windows(windows.iter().take(8));
    let (lz, dz) = t.model().noise_shape();
    let z = sample_noise(8, lz, dz, &mut ChaCha8Rng::seed_from_u64(99));
    (x, z)
}

/// Components whose parameters differ bitwise between two stores, sorted.
pub fn changed(before: &ParamStore, after: &ParamStore) -> Vec<Component> {
    let mut out = Vec::new();
    for (a, b) in before.entries().iter().zip(after.entries()) {
        if a.value.data() != b.value.data() && !out.contains(&a.component) {
            out.push(a.component);
        }
    }
    out.sort();
    out
}

pub fn sorted(components: &[Component]) -> Vec<Component> {
    let mut v = components.to_vec();
    v.sort();
    v
}

pub fn quiet() -> impl FnMut(&LossRecord) {
    |_| {}
}

pub const ONLY_GENERATORS: SubSteps = SubSteps {
    generators: true,
    autoencoder: false,
    discriminators: false,
};
pub const ONLY_AUTOENCODER: SubSteps = SubSteps {
    generators: false,
    autoencoder: true,
    discriminators: false,
};
pub const ONLY_DISCRIMINATORS: SubSteps = SubSteps {
    generators: false,
    autoencoder: false,
    discriminators: true,
};
