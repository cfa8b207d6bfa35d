//! Recurrent sequence autoencoder between observation windows `[B, T, M]`
//! and hidden sequences `[B, T, N]`.

use rand::Rng;

use crate::config::ModelDims;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Gru, Linear};
use crate::params::{Component, ParamStore};

#[derive(Clone, Debug)]
pub struct Autoencoder {
    pub encoder: Gru,
    pub encoder_out: Linear,
    pub decoder: Gru,
    pub decoder_out: Linear,
    pub features: usize,
    pub latent: usize,
}

impl Autoencoder {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, dims: &ModelDims) -> Self {
        let (m, n) = (dims.features, dims.latent);
        Autoencoder {
            encoder: Gru::new(store, rng, "encoder.gru", Component::Encoder, m, n, dims.encoder_layers),
            encoder_out: Linear::new(store, rng, "encoder.out", Component::Encoder, n, n),
            decoder: Gru::new(store, rng, "decoder.gru", Component::Decoder, n, n, dims.decoder_layers),
            decoder_out: Linear::new(store, rng, "decoder.out", Component::Decoder, n, m),
            features: m,
            latent: n,
        }
    }

    /// `H = σ(W·GRU(X) + b)`, shape `[B, T, N]`.
    pub fn encode(&self, g: &mut Graph, x: Var) -> Result<Var> {
        check_seq(g, x, self.features, "encoder input")?;
        let (states, _) = self.encoder.forward(g, x);
        let y = self.encoder_out.forward(g, states);
        let h = g.sigmoid(y);
        ensure_finite(g, h, "encoder")?;
        Ok(h)
    }

    /// `X̂ = σ(W·GRU(H) + b)`, shape `[B, T, M]`.
    pub fn decode(&self, g: &mut Graph, h: Var) -> Result<Var> {
        check_seq(g, h, self.latent, "decoder input")?;
        ensure_finite(g, h, "decoder input")?;
        let (states, _) = self.decoder.forward(g, h);
        let y = self.decoder_out.forward(g, states);
        let x = g.sigmoid(y);
        ensure_finite(g, x, "decoder")?;
        Ok(x)
    }
}

/// Mean over batch, time and features of squared differences.
pub fn reconstruction_loss(g: &mut Graph, x: Var, x_hat: Var) -> Result<Var> {
    if g.shape(x) != g.shape(x_hat) {
        return Err(Error::ShapeMismatch(format!(
            "reconstruction {:?} vs target {:?}",
            g.shape(x_hat),
            g.shape(x)
        )));
    }
    Ok(g.mse(x, x_hat))
}

pub(crate) fn check_seq(g: &Graph, x: Var, width: usize, what: &str) -> Result<()> {
    let s = g.shape(x);
    if s.len() != 3 || s[2] != width {
        return Err(Error::ShapeMismatch(format!(
            "{what}: expected [B, T, {width}], got {s:?}"
        )));
    }
    Ok(())
}

pub(crate) fn ensure_finite(g: &Graph, v: Var, what: &'static str) -> Result<()> {
    if g.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation(what))
    }
}
