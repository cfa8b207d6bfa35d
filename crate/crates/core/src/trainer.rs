//! Three-phase training: autoencoder pretraining, latent-path pretraining
//! and joint adversarial training, plus synthesis from a trained model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::reconstruction_loss;
use crate::checkpoint::{Checkpoint, Progress};
use crate::config::TrainingConfig;
use crate::data::{denormalize, shuffled_batches, stack_windows, unstack, NormStats, TimeSeriesWindow};
use crate::error::{Error, Result};
use crate::graph::{bce_with_logits, Graph, Var};
use crate::latent_gan::sample_noise;
use crate::model::Dlgan;
use crate::optim::Adam;
use crate::params::{Component, ParamId};
use crate::tensor::Tensor;

/// Which player a GAN loss is computed for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GanSide {
    /// Non-saturating: fake logits against label 1.
    Generator,
    /// Real logits against 1 and fake logits against 0, each class averaged
    /// separately and the two means averaged.
    Discriminator,
}

/// Standard GAN loss on raw logits.
pub fn gan_loss(real_logits: &[f64], fake_logits: &[f64], side: GanSide) -> Result<f64> {
    if real_logits.iter().chain(fake_logits).any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteLogit);
    }
    Ok(match side {
        GanSide::Generator => bce_with_logits(fake_logits, &vec![1.0; fake_logits.len()]),
        GanSide::Discriminator => {
            0.5 * (bce_with_logits(real_logits, &vec![1.0; real_logits.len()])
                + bce_with_logits(fake_logits, &vec![0.0; fake_logits.len()]))
        }
    })
}

fn flatten_logits(g: &mut Graph, logits: &[Var]) -> Var {
    let flat: Vec<Var> = logits
        .iter()
        .map(|&l| {
            let n = g.value(l).len();
            g.reshape(l, &[1, n])
        })
        .collect();
    if flat.len() == 1 {
        flat[0]
    } else {
        g.concat_last(&flat)
    }
}

/// Graph form of [`gan_loss`]; each slice holds `[B, 1]` logit nodes.
pub fn gan_loss_graph(g: &mut Graph, real: &[Var], fake: &[Var], side: GanSide) -> Result<Var> {
    if real.iter().chain(fake).any(|&v| !g.value(v).is_finite()) {
        return Err(Error::NonFiniteLogit);
    }
    let fake_flat = flatten_logits(g, fake);
    let nf = g.value(fake_flat).len();
    match side {
        GanSide::Generator => Ok(g.bce_with_logits(fake_flat, &vec![1.0; nf])),
        GanSide::Discriminator => {
            let real_flat = flatten_logits(g, real);
            let nr = g.value(real_flat).len();
            let lr = g.bce_with_logits(real_flat, &vec![1.0; nr]);
            let lf = g.bce_with_logits(fake_flat, &vec![0.0; nf]);
            let sum = g.add(lr, lf);
            Ok(g.scale(sum, 0.5))
        }
    }
}

/// Per-epoch mean losses of one phase. Unused terms are absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub phase: u8,
    pub epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
}

impl LossRecord {
    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        [self.ae, self.h, self.g, self.d].into_iter().flatten()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("loss record serializes")
    }
}

/// The three terms of the generator objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorTerms {
    /// GAN loss of Discriminator₁ on `H_emb^Fake`.
    pub feature_adversarial: f64,
    /// GAN loss of Discriminator₂ on the reconstructions.
    pub sequence_adversarial: f64,
    /// `mse(H^Real, Ĥ^Real)`.
    pub supervised: f64,
}

impl GeneratorTerms {
    pub fn total(&self) -> f64 {
        self.feature_adversarial + self.sequence_adversarial + self.supervised
    }
}

/// Losses from one joint step, each measured before its own update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointLosses {
    pub generator: f64,
    pub autoencoder_reconstruction: f64,
    pub latent_reconstruction: f64,
    pub discriminator: f64,
}

/// Which sub-steps of a joint step run; used to probe isolation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubSteps {
    pub generators: bool,
    pub autoencoder: bool,
    pub discriminators: bool,
}

impl SubSteps {
    pub const ALL: SubSteps = SubSteps {
        generators: true,
        autoencoder: true,
        discriminators: true,
    };
}

/// Parameter sets updated by each phase and sub-step.
pub mod update_sets {
    use crate::params::Component;

    pub const AUTOENCODER: &[Component] = &[Component::Encoder, Component::Decoder];
    pub const LATENT_PATH: &[Component] = &[Component::Extractor, Component::Generator2];
    pub const GENERATORS: &[Component] = &[
        Component::Extractor,
        Component::Generator1,
        Component::Generator2,
    ];
    pub const DISCRIMINATORS: &[Component] =
        &[Component::Discriminator1, Component::Discriminator2];
}

struct JointOptimizers {
    generators: Adam,
    autoencoder: Adam,
    discriminators: Adam,
}

/// A model under training together with its optimizer state.
pub struct Trainer {
    pub state: Checkpoint,
    phase_optimizer: Option<Adam>,
    joint: Option<JointOptimizers>,
}

/// Pieces shared by the forward passes of a joint step.
struct LatentForward {
    h: Var,
    real_embedding: Var,
    fake_embedding: Var,
    h_hat_real: Var,
    h_hat_fake: Var,
}

impl Trainer {
    /// Fresh model for data with `stats.features()` columns.
    pub fn new(config: &TrainingConfig, stats: NormStats, feature_names: Vec<String>) -> Result<Self> {
        let config = config.resolved(stats.features())?;
        let dims = config.dims(stats.features())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Dlgan::new(dims, &mut rng);
        Ok(Trainer {
            state: Checkpoint {
                config,
                model,
                stats,
                feature_names,
                rng,
                progress: Progress::default(),
            },
            phase_optimizer: None,
            joint: None,
        })
    }

    /// Continues from a checkpoint; optimizer moments start fresh.
    pub fn resume(state: Checkpoint) -> Self {
        Trainer {
            state,
            phase_optimizer: None,
            joint: None,
        }
    }

    pub fn model(&self) -> &Dlgan {
        &self.state.model
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.state.config
    }

    fn ids(&self, components: &[Component]) -> Vec<ParamId> {
        self.state.model.store.ids_of(components)
    }

    fn expect_phase(&self, phase: u8) -> Result<()> {
        let completed = self.state.progress.phases_completed;
        if completed + 1 != phase {
            return Err(Error::PhaseOrder {
                requested: phase,
                completed,
            });
        }
        Ok(())
    }

    // ---- phase 1 ----

    /// One update of encoder and decoder on `L_R^AE`.
    pub fn autoencoder_step(&mut self, x: &Tensor) -> Result<f64> {
        let ids = self.ids(update_sets::AUTOENCODER);
        let opt = self
            .phase_optimizer
            .get_or_insert_with(|| Adam::new(ids.clone(), self.state.config.lr_pretrain));
        let model = &self.state.model;
        let mut g = Graph::with_trainable(&model.store, &ids);
        let xv = g.input(x.clone());
        let h = model.autoencoder.encode(&mut g, xv)?;
        let x_hat = model.autoencoder.decode(&mut g, h)?;
        let loss = reconstruction_loss(&mut g, xv, x_hat)?;
        let value = g.value(loss).item();
        let grads = g.backward(loss);
        drop(g);
        opt.step(&mut self.state.model.store, &grads);
        Ok(value)
    }

    /// Phase 1: minimizes `L_R^AE`, touching only the autoencoder.
    pub fn pretrain_autoencoder(
        &mut self,
        data: &[TimeSeriesWindow],
        sink: &mut dyn FnMut(&LossRecord),
    ) -> Result<Vec<LossRecord>> {
        self.expect_phase(1)?;
        self.phase_optimizer = None;
        let epochs = self.state.config.epochs_autoencoder;
        let records = self.run_epochs(1, epochs, data, sink, |t, x| {
            let ae = t.autoencoder_step(x)?;
            Ok([Some(ae), None, None, None])
        })?;
        self.finish_phase(1);
        Ok(records)
    }

    // ---- phase 2 ----

    /// `L_R^H = mse(H, Ĥ^Real)` built on `g`; returns (H, Ĥ^Real, loss).
    fn latent_loss(&self, g: &mut Graph, x: Var) -> Result<(Var, Var, Var)> {
        let model = &self.state.model;
        let h = model.autoencoder.encode(g, x)?;
        let extracted = model.extractor.forward(g, h)?;
        let h_hat = model.reconstruct_real(g, &extracted, h)?;
        let loss = reconstruction_loss(g, h, h_hat)?;
        Ok((h, h_hat, loss))
    }

    /// One update of extractor and Generator₂ on `L_R^H`.
    pub fn latent_step(&mut self, x: &Tensor) -> Result<f64> {
        let ids = self.ids(update_sets::LATENT_PATH);
        let lr = self.state.config.lr_pretrain;
        let mut opt = self
            .phase_optimizer
            .take()
            .unwrap_or_else(|| Adam::new(ids.clone(), lr));
        let result = (|| {
            let mut g = Graph::with_trainable(&self.state.model.store, &ids);
            let xv = g.input(x.clone());
            let (_, _, loss) = self.latent_loss(&mut g, xv)?;
            let value = g.value(loss).item();
            let grads = g.backward(loss);
            Ok::<_, Error>((value, grads))
        })();
        let out = result.map(|(value, grads)| {
            opt.step(&mut self.state.model.store, &grads);
            value
        });
        self.phase_optimizer = Some(opt);
        out
    }

    /// Phase 2: minimizes `L_R^H` with the encoder frozen.
    pub fn pretrain_latent_path(
        &mut self,
        data: &[TimeSeriesWindow],
        sink: &mut dyn FnMut(&LossRecord),
    ) -> Result<Vec<LossRecord>> {
        self.expect_phase(2)?;
        self.phase_optimizer = None;
        let epochs = self.state.config.epochs_latent;
        let records = self.run_epochs(2, epochs, data, sink, |t, x| {
            let h = t.latent_step(x)?;
            Ok([None, Some(h), None, None])
        })?;
        self.finish_phase(2);
        Ok(records)
    }

    // ---- phase 3 ----

    fn latent_forward(&self, g: &mut Graph, x: Var, z: Var) -> Result<LatentForward> {
        let model = &self.state.model;
        let h = model.autoencoder.encode(g, x)?;
        let extracted = model.extractor.forward(g, h)?;
        let h_hat_real = model.reconstruct_real(g, &extracted, h)?;
        let generated = model.generator1.forward(g, z)?;
        let h_hat_fake = model.reconstruct_fake(g, &generated)?;
        Ok(LatentForward {
            h,
            real_embedding: extracted.embedding,
            fake_embedding: generated.embedding,
            h_hat_real,
            h_hat_fake,
        })
    }

    /// Builds the generator objective; returns (terms, total).
    fn generator_loss(&self, g: &mut Graph, x: Var, z: Var) -> Result<([Var; 3], Var)> {
        let model = &self.state.model;
        let f = self.latent_forward(g, x, z)?;
        let y1_fake = model.discriminator1.forward(g, f.fake_embedding)?;
        let adv1 = gan_loss_graph(g, &[], &[y1_fake], GanSide::Generator)?;
        let y2_fake = model.discriminator2.forward(g, f.h_hat_fake)?;
        let y2_real_hat = model.discriminator2.forward(g, f.h_hat_real)?;
        let adv2 = if self.state.config.d2_reconstruction_as_real {
            gan_loss_graph(g, &[], &[y2_fake], GanSide::Generator)?
        } else {
            gan_loss_graph(g, &[], &[y2_fake, y2_real_hat], GanSide::Generator)?
        };
        let sup = reconstruction_loss(g, f.h, f.h_hat_real)?;
        let s = g.add(adv1, adv2);
        let total = g.add(s, sup);
        Ok(([adv1, adv2, sup], total))
    }

    /// Builds the discriminator objective; returns ([L_gan(y₁), L_gan(y₂)], total).
    fn discriminator_loss(&self, g: &mut Graph, x: Var, z: Var) -> Result<([Var; 2], Var)> {
        let model = &self.state.model;
        let f = self.latent_forward(g, x, z)?;
        let y1_real = model.discriminator1.forward(g, f.real_embedding)?;
        let y1_fake = model.discriminator1.forward(g, f.fake_embedding)?;
        let l1 = gan_loss_graph(g, &[y1_real], &[y1_fake], GanSide::Discriminator)?;
        let y2_real = model.discriminator2.forward(g, f.h)?;
        let y2_real_hat = model.discriminator2.forward(g, f.h_hat_real)?;
        let y2_fake = model.discriminator2.forward(g, f.h_hat_fake)?;
        let l2 = if self.state.config.d2_reconstruction_as_real {
            gan_loss_graph(g, &[y2_real, y2_real_hat], &[y2_fake], GanSide::Discriminator)?
        } else {
            gan_loss_graph(g, &[y2_real], &[y2_real_hat, y2_fake], GanSide::Discriminator)?
        };
        let total = g.add(l1, l2);
        Ok(([l1, l2], total))
    }

    /// `L_R^AE + L_R^H` with gradients flowing into the encoder from both.
    fn autoencoder_finetune_loss(&self, g: &mut Graph, x: Var) -> Result<(f64, f64, Var)> {
        let model = &self.state.model;
        let h = model.autoencoder.encode(g, x)?;
        let x_hat = model.autoencoder.decode(g, h)?;
        let ae = reconstruction_loss(g, x, x_hat)?;
        let extracted = model.extractor.forward(g, h)?;
        let h_hat = model.reconstruct_real(g, &extracted, h)?;
        let lh = reconstruction_loss(g, h, h_hat)?;
        let total = g.add(ae, lh);
        Ok((g.value(ae).item(), g.value(lh).item(), total))
    }

    /// Each generator-loss term evaluated in its own graph at the current
    /// parameters.
    pub fn generator_terms(&self, x: &Tensor, z: &Tensor) -> Result<GeneratorTerms> {
        let term = |k: usize| -> Result<f64> {
            let mut g = Graph::inference(&self.state.model.store);
            let (xv, zv) = (g.input(x.clone()), g.input(z.clone()));
            let (terms, _) = self.generator_loss(&mut g, xv, zv)?;
            Ok(g.value(terms[k]).item())
        };
        Ok(GeneratorTerms {
            feature_adversarial: term(0)?,
            sequence_adversarial: term(1)?,
            supervised: term(2)?,
        })
    }

    /// `[L_gan(y₁), L_gan(y₂)]` for the discriminators at the current parameters.
    pub fn discriminator_terms(&self, x: &Tensor, z: &Tensor) -> Result<[f64; 2]> {
        let mut g = Graph::inference(&self.state.model.store);
        let (xv, zv) = (g.input(x.clone()), g.input(z.clone()));
        let (terms, _) = self.discriminator_loss(&mut g, xv, zv)?;
        Ok([g.value(terms[0]).item(), g.value(terms[1]).item()])
    }

    fn joint_optimizers(&mut self) -> JointOptimizers {
        let lr = self.state.config.lr_joint;
        self.joint.take().unwrap_or_else(|| JointOptimizers {
            generators: Adam::new(self.ids(update_sets::GENERATORS), lr),
            autoencoder: Adam::new(self.ids(update_sets::AUTOENCODER), lr),
            discriminators: Adam::new(self.ids(update_sets::DISCRIMINATORS), lr),
        })
    }

    /// One joint iteration with fresh noise from the training rng.
    pub fn joint_step(&mut self, x: &Tensor) -> Result<JointLosses> {
        let (lz, dz) = self.state.model.noise_shape();
        let z = sample_noise(x.dim(0), lz, dz, &mut self.state.rng);
        self.joint_step_with_noise(x, &z, SubSteps::ALL)
    }

    /// Generators on `L_G`, then encoder/decoder on `L_R^AE + L_R^H`, then
    /// discriminators on `L_D`. Each loss is measured right before its own
    /// update; disabled sub-steps report NaN.
    pub fn joint_step_with_noise(
        &mut self,
        x: &Tensor,
        z: &Tensor,
        which: SubSteps,
    ) -> Result<JointLosses> {
        let mut opts = self.joint_optimizers();
        let result = self.joint_substeps(x, z, which, &mut opts);
        self.joint = Some(opts);
        result
    }

    fn joint_substeps(
        &mut self,
        x: &Tensor,
        z: &Tensor,
        which: SubSteps,
        opts: &mut JointOptimizers,
    ) -> Result<JointLosses> {
        let mut losses = JointLosses {
            generator: f64::NAN,
            autoencoder_reconstruction: f64::NAN,
            latent_reconstruction: f64::NAN,
            discriminator: f64::NAN,
        };

        if which.generators {
            let ids = opts.generators.params().to_vec();
            let mut g = Graph::with_trainable(&self.state.model.store, &ids);
            let (xv, zv) = (g.input(x.clone()), g.input(z.clone()));
            let (_, total) = self.generator_loss(&mut g, xv, zv)?;
            losses.generator = g.value(total).item();
            let grads = g.backward(total);
            drop(g);
            opts.generators.step(&mut self.state.model.store, &grads);
        }

        if which.autoencoder {
            let ids = opts.autoencoder.params().to_vec();
            let mut g = Graph::with_trainable(&self.state.model.store, &ids);
            let xv = g.input(x.clone());
            let (ae, lh, total) = self.autoencoder_finetune_loss(&mut g, xv)?;
            losses.autoencoder_reconstruction = ae;
            losses.latent_reconstruction = lh;
            let grads = g.backward(total);
            drop(g);
            opts.autoencoder.step(&mut self.state.model.store, &grads);
        }

        if which.discriminators {
            let ids = opts.discriminators.params().to_vec();
            let mut g = Graph::with_trainable(&self.state.model.store, &ids);
            let (xv, zv) = (g.input(x.clone()), g.input(z.clone()));
            let (_, total) = self.discriminator_loss(&mut g, xv, zv)?;
            losses.discriminator = g.value(total).item();
            let grads = g.backward(total);
            drop(g);
            opts.discriminators.step(&mut self.state.model.store, &grads);
        }
        Ok(losses)
    }

    /// Phase 3: joint adversarial training.
    pub fn train_joint(
        &mut self,
        data: &[TimeSeriesWindow],
        sink: &mut dyn FnMut(&LossRecord),
    ) -> Result<Vec<LossRecord>> {
        self.expect_phase(3)?;
        self.joint = None;
        let epochs = self.state.config.epochs_joint;
        let records = self.run_epochs(3, epochs, data, sink, |t, x| {
            let l = t.joint_step(x)?;
            Ok([
                Some(l.autoencoder_reconstruction),
                Some(l.latent_reconstruction),
                Some(l.generator),
                Some(l.discriminator),
            ])
        })?;
        self.finish_phase(3);
        Ok(records)
    }

    /// Runs all three phases in order.
    pub fn train(
        &mut self,
        data: &[TimeSeriesWindow],
        sink: &mut dyn FnMut(&LossRecord),
    ) -> Result<Vec<LossRecord>> {
        let mut all = self.pretrain_autoencoder(data, sink)?;
        all.extend(self.pretrain_latent_path(data, sink)?);
        all.extend(self.train_joint(data, sink)?);
        Ok(all)
    }

    fn finish_phase(&mut self, phase: u8) {
        self.state.progress.phases_completed = phase;
        self.phase_optimizer = None;
    }

    /// Shared epoch loop. On a non-finite loss or parameter the model is
    /// restored to its state at the start of the failing epoch.
    fn run_epochs(
        &mut self,
        phase: u8,
        epochs: usize,
        data: &[TimeSeriesWindow],
        sink: &mut dyn FnMut(&LossRecord),
        mut step: impl FnMut(&mut Self, &Tensor) -> Result<[Option<f64>; 4]>,
    ) -> Result<Vec<LossRecord>> {
        if data.is_empty() {
            return Err(Error::InsufficientData { need: 1, have: 0 });
        }
        let all = stack_windows(data);
        let (t, m) = (all.dim(1), all.dim(2));
        let mut records = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            let last_good = self.state.model.store.clone();
            let batches = shuffled_batches(data.len(), self.state.config.batch_size, &mut self.state.rng);
            let mut sums = [0.0f64; 4];
            let mut present = [false; 4];
            let mut diverged = false;
            for idx in &batches {
                let mut x = Vec::with_capacity(idx.len() * t * m);
                for &i in idx {
                    x.extend_from_slice(&all.data()[i * t * m..(i + 1) * t * m]);
                }
                let x = Tensor::new(&[idx.len(), t, m], x);
                let values = match step(self, &x) {
                    Ok(v) => v,
                    Err(Error::NonFiniteActivation(_)) | Err(Error::NonFiniteLogit) => {
                        diverged = true;
                        break;
                    }
                    Err(e) => return Err(e),
                };
                for (k, v) in values.iter().enumerate() {
                    if let Some(v) = v {
                        sums[k] += v * idx.len() as f64;
                        present[k] = true;
                    }
                }
                if values.iter().flatten().any(|v| !v.is_finite()) || !self.state.model.store.all_finite() {
                    diverged = true;
                    break;
                }
            }
            if diverged {
                self.state.model.store = last_good;
                return Err(Error::DivergenceDetected { phase, epoch });
            }
            let mean = |k: usize| present[k].then(|| sums[k] / data.len() as f64);
            let record = LossRecord {
                phase,
                epoch,
                ae: mean(0),
                h: mean(1),
                g: mean(2),
                d: mean(3),
            };
            self.state.progress.epoch = epoch + 1;
            sink(&record);
            records.push(record);
        }
        Ok(records)
    }
}

/// Synthetic windows both in model space and in original units.
#[derive(Clone, Debug)]
pub struct Synthesis {
    /// `[T, M]` decoder outputs, every entry in `(0, 1)`.
    pub normalized: Vec<Tensor>,
    /// The same windows mapped back through the training normalizer.
    pub values: Vec<Tensor>,
}

/// Batch size used when drawing synthetic windows.
pub const SYNTHESIS_BATCH: usize = 256;

/// Noise → Generator₁ → Generator₂ (autoregressive) → decoder → denormalize.
///
/// Noise is drawn window by window from a rng seeded with `seed`, so the
/// output does not depend on how the work is batched.
pub fn synthesize(checkpoint: &Checkpoint, n: usize, seed: u64) -> Result<Synthesis> {
    checkpoint.require_trained()?;
    synthesize_with(&checkpoint.model, &checkpoint.stats, n, seed)
}

/// [`synthesize`] without the training-progress check.
pub fn synthesize_with(model: &Dlgan, stats: &NormStats, n: usize, seed: u64) -> Result<Synthesis> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lz, dz) = model.noise_shape();
    let mut normalized = Vec::with_capacity(n);
    let mut remaining = n;
    while remaining > 0 {
        let b = remaining.min(SYNTHESIS_BATCH);
        let z = sample_noise(b, lz, dz, &mut rng);
        let x = model.generate_tensor(&z)?;
        normalized.extend(unstack(&x));
        remaining -= b;
    }
    let values = denormalize(&normalized, stats)?;
    Ok(Synthesis { normalized, values })
}

/// Fraction of held-out feature vectors Discriminator₁ labels correctly
/// (real `H_emb` from `real` windows vs. `H_emb^Fake` from as many noise
/// draws), thresholding logits at 0.
pub fn discriminator1_accuracy(model: &Dlgan, real: &[TimeSeriesWindow], seed: u64) -> Result<f64> {
    let x = stack_windows(real);
    let h = model.encode_tensor(&x)?;
    let real_emb = model.extract_tensor(&h)?;
    let (lz, dz) = model.noise_shape();
    let z = sample_noise(real.len(), lz, dz, &mut ChaCha8Rng::seed_from_u64(seed));
    let fake_emb = model.generate_feature_tensor(&z)?;
    let logits = |e: &Tensor| -> Result<Vec<f64>> {
        let mut g = Graph::inference(&model.store);
        let ev = g.input(e.clone());
        let l = model.discriminator1.forward(&mut g, ev)?;
        Ok(g.value(l).data().to_vec())
    };
    let correct_real = logits(&real_emb)?.iter().filter(|&&l| l > 0.0).count();
    let correct_fake = logits(&fake_emb)?.iter().filter(|&&l| l <= 0.0).count();
    Ok((correct_real + correct_fake) as f64 / (2 * real.len()) as f64)
}
