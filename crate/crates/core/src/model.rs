//! The assembled network: autoencoder, temporal feature extractor and the
//! two stacked GANs, all sharing one [`ParamStore`].

use rand::Rng;

use crate::autoencoder::Autoencoder;
use crate::config::ModelDims;
use crate::error::{Error, Result};
use crate::extractor::{Extracted, TemporalFeatureExtractor};
use crate::graph::{Graph, Var};
use crate::latent_gan::{Discriminator1, Generated, Generator1};
use crate::params::ParamStore;
use crate::reconstructor::{Discriminator2, Generator2, ReconstructMode};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Dlgan {
    pub dims: ModelDims,
    pub store: ParamStore,
    pub autoencoder: Autoencoder,
    pub extractor: TemporalFeatureExtractor,
    pub generator1: Generator1,
    pub discriminator1: Discriminator1,
    pub generator2: Generator2,
    pub discriminator2: Discriminator2,
}

impl Dlgan {
    /// Registers every parameter in a fixed order so that two models built
    /// from the same dims and rng state are identical.
    pub fn new(dims: ModelDims, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let autoencoder = Autoencoder::new(&mut store, rng, &dims);
        let extractor = TemporalFeatureExtractor::new(&mut store, rng, &dims);
        let generator1 = Generator1::new(&mut store, rng, &dims);
        let discriminator1 = Discriminator1::new(&mut store, rng, &dims);
        let generator2 = Generator2::new(&mut store, rng, &dims);
        let discriminator2 = Discriminator2::new(&mut store, rng, &dims);
        Dlgan {
            dims,
            store,
            autoencoder,
            extractor,
            generator1,
            discriminator1,
            generator2,
            discriminator2,
        }
    }

    /// Real path: `Ĥ^Real` from the extractor's output, teacher-forced on `h`.
    pub fn reconstruct_real(&self, g: &mut Graph, extracted: &Extracted, h: Var) -> Result<Var> {
        if self.generator2.is_sequence_mode() {
            self.generator2.reconstruct_sequence(g, extracted.steps)
        } else {
            self.generator2
                .reconstruct(g, extracted.embedding, ReconstructMode::TeacherForced, Some(h))
        }
    }

    /// Fake path: `Ĥ^Fake` generated autoregressively from Generator₁'s output.
    pub fn reconstruct_fake(&self, g: &mut Graph, generated: &Generated) -> Result<Var> {
        if self.generator2.is_sequence_mode() {
            self.generator2.reconstruct_sequence(g, generated.steps)
        } else {
            self.generator2
                .reconstruct(g, generated.embedding, ReconstructMode::Autoregressive, None)
        }
    }

    /// Noise `[B, L_z, D_z]` → Generator₁ → Generator₂ → decoder, giving
    /// normalized windows `[B, T, M]`.
    pub fn generate(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let generated = self.generator1.forward(g, z)?;
        let h_fake = self.reconstruct_fake(g, &generated)?;
        self.autoencoder.decode(g, h_fake)
    }

    fn run(&self, f: impl FnOnce(&mut Graph) -> Result<Var>) -> Result<Tensor> {
        let mut g = Graph::inference(&self.store);
        let v = f(&mut g)?;
        Ok(g.value(v).clone())
    }

    pub fn encode_tensor(&self, x: &Tensor) -> Result<Tensor> {
        self.run(|g| {
            let xv = g.input(x.clone());
            self.autoencoder.encode(g, xv)
        })
    }

    pub fn decode_tensor(&self, h: &Tensor) -> Result<Tensor> {
        self.run(|g| {
            let hv = g.input(h.clone());
            self.autoencoder.decode(g, hv)
        })
    }

    /// `H_emb^Real` for hidden sequences `[B, T, N]`.
    pub fn extract_tensor(&self, h: &Tensor) -> Result<Tensor> {
        self.run(|g| {
            let hv = g.input(h.clone());
            Ok(self.extractor.forward(g, hv)?.embedding)
        })
    }

    /// `H_emb^Fake` for noise `[B, L_z, D_z]`.
    pub fn generate_feature_tensor(&self, z: &Tensor) -> Result<Tensor> {
        self.run(|g| {
            let zv = g.input(z.clone());
            Ok(self.generator1.forward(g, zv)?.embedding)
        })
    }

    pub fn generate_tensor(&self, z: &Tensor) -> Result<Tensor> {
        self.run(|g| {
            let zv = g.input(z.clone());
            self.generate(g, zv)
        })
    }

    /// Shape of one noise sample.
    pub fn noise_shape(&self) -> (usize, usize) {
        (self.dims.noise_len, self.dims.noise_dim)
    }

    /// Replaces every parameter value; names and shapes must match the
    /// registered layout exactly.
    pub fn load_params(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        if entries.len() != self.store.len() {
            return Err(Error::CorruptFile(format!(
                "{} parameter blocks, model has {}",
                entries.len(),
                self.store.len()
            )));
        }
        let ids: Vec<_> = self.store.ids().collect();
        for (id, (name, value)) in ids.into_iter().zip(entries) {
            let entry = self.store.entry(id);
            if entry.name != name || entry.value.shape() != value.shape() {
                return Err(Error::CorruptFile(format!(
                    "block `{name}` {:?} does not match `{}` {:?}",
                    value.shape(),
                    entry.name,
                    entry.value.shape()
                )));
            }
            *self.store.get_mut(id) = value;
        }
        Ok(())
    }
}
