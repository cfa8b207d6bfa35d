//! First GAN layer: Generator₁ maps noise `[B, L_z, D_z]` to temporal feature
//! vectors; Discriminator₁ scores feature vectors.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autoencoder::{check_seq, ensure_finite};
use crate::config::ModelDims;
use crate::error::{Error, Result};
use crate::graph::{moving_average_axis1, Graph, Var};
use crate::nn::{attention, Attended, Gru, Linear, TransformerBlock};
use crate::params::{Component, ParamStore};
use crate::tensor::Tensor;

/// `[batch, len, dim]` i.i.d. standard normal samples, drawn in row-major
/// order from `rng`.
pub fn sample_noise(batch: usize, len: usize, dim: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(&[batch, len, dim], |_| rng.sample(StandardNormal))
}

/// Centered moving average with stride 1 and edge replication over the
/// time axis of `[L, D]` or `[B, L, D]`.
pub fn moving_average(z: &Tensor, window: usize) -> Result<Tensor> {
    let len = match z.ndim() {
        2 => z.dim(0),
        3 => z.dim(1),
        _ => return Err(Error::ShapeMismatch(format!("moving average of {:?}", z.shape()))),
    };
    if window == 0 || window % 2 == 0 || window > len {
        return Err(Error::BadWindow { window, len });
    }
    if z.ndim() == 2 {
        let batched = z.clone().reshape(&[1, z.dim(0), z.dim(1)]);
        Ok(moving_average_axis1(&batched, window).reshape(z.shape()))
    } else {
        Ok(moving_average_axis1(z, window))
    }
}

/// `softmax(Q·Kᵀ)·V` over `[B, P_q, e]`, `[B, P_k, e]`, `[B, P_k, e]`.
/// With `scaled`, logits are multiplied by `1/√e`.
pub fn cross_attention(g: &mut Graph, q: Var, k: Var, v: Var, scaled: bool) -> Result<Attended> {
    let (qs, ks, vs) = (g.shape(q).to_vec(), g.shape(k).to_vec(), g.shape(v).to_vec());
    if qs.len() != 3 || ks.len() != 3 || vs.len() != 3 {
        return Err(Error::ShapeMismatch("cross attention expects [B, P, e] inputs".into()));
    }
    if qs[0] != ks[0] || ks[0] != vs[0] || qs[2] != ks[2] || ks[1] != vs[1] {
        return Err(Error::ShapeMismatch(format!(
            "cross attention Q{qs:?} K{ks:?} V{vs:?}"
        )));
    }
    let scale = scaled.then(|| 1.0 / (qs[2] as f64).sqrt());
    Ok(attention(g, q, k, v, scale))
}

/// Convenience wrapper evaluating [`cross_attention`] on plain matrices
/// `[P_q, e]`, `[P_k, e]`, `[P_k, e]`.
pub fn cross_attention_values(q: &Tensor, k: &Tensor, v: &Tensor, scaled: bool) -> Result<Tensor> {
    let store = ParamStore::new();
    let mut g = Graph::inference(&store);
    let lift = |t: &Tensor| {
        if t.ndim() != 2 {
            return Err(Error::ShapeMismatch(format!("expected a matrix, got {:?}", t.shape())));
        }
        Ok(t.clone().reshape(&[1, t.dim(0), t.dim(1)]))
    };
    let (qv, kv, vv) = (g.input(lift(q)?), g.input(lift(k)?), g.input(lift(v)?));
    let out = cross_attention(&mut g, qv, kv, vv, scaled)?;
    let t = g.value(out.output).clone();
    let shape = [t.dim(1), t.dim(2)];
    Ok(t.reshape(&shape))
}

#[derive(Clone, Debug)]
pub struct Generator1 {
    pub trend: TransformerBlock,
    pub detail: TransformerBlock,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub summarizer: Gru,
    pub trend_window: usize,
    pub noise_len: usize,
    pub noise_dim: usize,
    pub scaled: bool,
}

/// Outputs of one Generator₁ pass.
#[derive(Clone, Copy, Debug)]
pub struct Generated {
    /// `H_emb^Fake`, `[B, F]`.
    pub embedding: Var,
    /// Summarizer states `[B, L_z, F]`.
    pub steps: Var,
    pub cross_weights: Var,
}

impl Generator1 {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, dims: &ModelDims) -> Self {
        let c = Component::Generator1;
        let d = dims.noise_dim;
        Generator1 {
            trend: TransformerBlock::new(store, rng, "generator1.trend", c, d, dims.generator_heads),
            detail: TransformerBlock::new(store, rng, "generator1.detail", c, d, dims.generator_heads),
            query: Linear::new(store, rng, "generator1.cross.query", c, d, d),
            key: Linear::new(store, rng, "generator1.cross.key", c, d, d),
            value: Linear::new(store, rng, "generator1.cross.value", c, d, d),
            summarizer: Gru::new(
                store,
                rng,
                "generator1.summarizer",
                c,
                d,
                dims.feature_vec,
                dims.generator_layers,
            ),
            trend_window: dims.trend_window,
            noise_len: dims.noise_len,
            noise_dim: d,
            scaled: dims.scale_cross_attention,
        }
    }

    /// Trend branch `TF(AvgPool(Z))` queries the detail branch `TF(Z)`; the
    /// attended sequence is summarized recurrently.
    pub fn forward(&self, g: &mut Graph, z: Var) -> Result<Generated> {
        check_seq(g, z, self.noise_dim, "generator1 noise")?;
        if g.shape(z)[1] != self.noise_len {
            return Err(Error::ShapeMismatch(format!(
                "noise length {} != {}",
                g.shape(z)[1],
                self.noise_len
            )));
        }
        let smooth = g.moving_average(z, self.trend_window);
        let trend = self.trend.forward(g, smooth);
        let detail = self.detail.forward(g, z);
        let q = self.query.forward(g, trend);
        let k = self.key.forward(g, detail);
        let v = self.value.forward(g, detail);
        let ca = cross_attention(g, q, k, v, self.scaled)?;
        let (states, last) = self.summarizer.forward(g, ca.output);
        ensure_finite(g, last, "generator1")?;
        Ok(Generated {
            embedding: last,
            steps: states,
            cross_weights: ca.weights,
        })
    }
}

/// Feed-forward classifier `F → 2F → F → 1` with leaky rectifiers. The
/// output layer starts at zero so untrained logits are exactly 0.
#[derive(Clone, Debug)]
pub struct Discriminator1 {
    pub hidden1: Linear,
    pub hidden2: Linear,
    pub head: Linear,
    pub width: usize,
}

impl Discriminator1 {
    pub const LEAK: f64 = 0.2;

    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, dims: &ModelDims) -> Self {
        let c = Component::Discriminator1;
        let f = dims.feature_vec;
        Discriminator1 {
            hidden1: Linear::new(store, rng, "discriminator1.hidden1", c, f, 2 * f),
            hidden2: Linear::new(store, rng, "discriminator1.hidden2", c, 2 * f, f),
            head: Linear::zeroed(store, rng, "discriminator1.head", c, f, 1),
            width: f,
        }
    }

    /// Logits `[B, 1]` for feature vectors `[B, F]`.
    pub fn forward(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let s = g.shape(h);
        if s.len() != 2 || s[1] != self.width {
            return Err(Error::ShapeMismatch(format!(
                "discriminator1 expects [B, {}], got {s:?}",
                self.width
            )));
        }
        let x = self.hidden1.forward(g, h);
        let x = g.leaky_relu(x, Self::LEAK);
        let x = self.hidden2.forward(g, x);
        let x = g.leaky_relu(x, Self::LEAK);
        Ok(self.head.forward(g, x))
    }
}
