//! Temporal feature extractor: compresses a hidden sequence `[B, T, N]` into
//! a feature vector `[B, F]`.
//!
//! Each channel is cut into non-overlapping patches, embedded, offset by a
//! fixed sinusoidal position table and attended over time independently per
//! channel. A second attention runs across channels at every patch position
//! (no position table), the channel embeddings of each position are
//! concatenated, and a recurrent summarizer over the positions yields the
//! final state.

use rand::Rng;

use crate::autoencoder::{check_seq, ensure_finite};
use crate::config::ModelDims;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{sinusoidal_table, Attended, Gru, Linear, MultiHeadAttention};
use crate::params::{Component, ParamStore};
use crate::tensor::Tensor;

/// Per-channel patches of a `[T, N]` sequence, stored as `[N, P, p]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub values: Tensor,
    pub patch_len: usize,
    pub patch_count: usize,
}

impl PatchGrid {
    pub fn from_hidden(hidden: &Tensor, patch_len: usize) -> Result<Self> {
        let (t, n) = (hidden.dim(0), hidden.dim(1));
        let mut data = Vec::with_capacity(t * n);
        for d in 0..n {
            let channel: Vec<f64> = (0..t).map(|s| hidden.data()[s * n + d]).collect();
            for p in patch(&channel, patch_len)? {
                data.extend(p);
            }
        }
        Ok(PatchGrid {
            values: Tensor::new(&[n, t / patch_len, patch_len], data),
            patch_len,
            patch_count: t / patch_len,
        })
    }

    /// Concatenates channel `d`'s patches back into its sequence.
    pub fn channel(&self, d: usize) -> Vec<f64> {
        let len = self.patch_len * self.patch_count;
        self.values.data()[d * len..(d + 1) * len].to_vec()
    }
}

/// Splits a sequence into `len / patch_len` contiguous, ordered segments.
pub fn patch(sequence: &[f64], patch_len: usize) -> Result<Vec<Vec<f64>>> {
    if patch_len == 0 || sequence.len() % patch_len != 0 {
        return Err(Error::IndivisibleLength {
            len: sequence.len(),
            patch: patch_len,
        });
    }
    Ok(sequence.chunks(patch_len).map(<[f64]>::to_vec).collect())
}

#[derive(Clone, Debug)]
pub struct AttentionStack {
    pub embed: Linear,
    pub positions: Tensor,
    pub temporal: MultiHeadAttention,
    pub channel: MultiHeadAttention,
}

#[derive(Clone, Debug)]
pub struct TemporalFeatureExtractor {
    /// `None` in the "no extractor" ablation: only the summarizer remains.
    pub attention: Option<AttentionStack>,
    pub summarizer: Gru,
    pub window: usize,
    pub latent: usize,
    pub patch_len: usize,
    pub patches: usize,
    pub patch_embed: usize,
}

/// Everything one extractor pass produces.
#[derive(Clone, Copy, Debug)]
pub struct Extracted {
    /// `H_emb`, `[B, F]`.
    pub embedding: Var,
    /// Summarizer states expanded to one per timestep, `[B, T, F]`.
    pub steps: Var,
    /// `[B·N, P, e]` after temporal attention.
    pub h_time: Option<Var>,
    /// `[B·P, N, e]` after channel attention.
    pub h_dim: Option<Var>,
    pub temporal_weights: Option<Var>,
    pub channel_weights: Option<Var>,
}

impl TemporalFeatureExtractor {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, dims: &ModelDims) -> Self {
        let c = Component::Extractor;
        let (n, e) = (dims.latent, dims.patch_embed);
        let attention = (!dims.no_extractor).then(|| AttentionStack {
            embed: Linear::new(store, rng, "extractor.patch_embed", c, dims.patch_len, e),
            positions: sinusoidal_table(dims.patches, e),
            temporal: MultiHeadAttention::new(store, rng, "extractor.temporal", c, e, dims.heads, true),
            channel: MultiHeadAttention::new(store, rng, "extractor.channel", c, e, dims.heads, true),
        });
        let summarizer_in = if dims.no_extractor { n } else { n * e };
        let summarizer = Gru::new(
            store,
            rng,
            "extractor.summarizer",
            c,
            summarizer_in,
            dims.feature_vec,
            dims.summarizer_layers,
        );
        TemporalFeatureExtractor {
            attention,
            summarizer,
            window: dims.window,
            latent: n,
            patch_len: dims.patch_len,
            patches: dims.patches,
            patch_embed: e,
        }
    }

    /// Patches `[B, T, N]` into `[B·N, P, p]`, embeds to width `e` and adds
    /// the position table.
    pub fn embed_patches(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let stack = self.attention.as_ref().expect("attention stack present");
        let (b, t, n) = (g.shape(h)[0], g.shape(h)[1], g.shape(h)[2]);
        if t % self.patch_len != 0 {
            return Err(Error::IndivisibleLength {
                len: t,
                patch: self.patch_len,
            });
        }
        let channels = g.permute(h, &[0, 2, 1]);
        let patches = g.reshape(channels, &[b * n, t / self.patch_len, self.patch_len]);
        let embedded = stack.embed.forward(g, patches);
        let pos = g.input(stack.positions.clone());
        Ok(g.add_broadcast(embedded, pos))
    }

    /// Self-attention over the P patch positions of every channel.
    pub fn temporal_attention(&self, g: &mut Graph, patches: Var) -> Result<Attended> {
        let stack = self.attention.as_ref().expect("attention stack present");
        check_heads(self.patch_embed, stack.temporal.heads)?;
        Ok(stack.temporal.forward(g, patches))
    }

    /// Self-attention across the N channels at each patch position.
    /// Input `[B·N, P, e]`, output `[B·P, N, e]`.
    pub fn channel_attention(&self, g: &mut Graph, h_time: Var, batch: usize) -> Result<Attended> {
        let stack = self.attention.as_ref().expect("attention stack present");
        check_heads(self.patch_embed, stack.channel.heads)?;
        let (bn, p, e) = (g.shape(h_time)[0], g.shape(h_time)[1], g.shape(h_time)[2]);
        let n = bn / batch;
        let x = g.reshape(h_time, &[batch, n, p, e]);
        let x = g.permute(x, &[0, 2, 1, 3]);
        let x = g.reshape(x, &[batch * p, n, e]);
        Ok(stack.channel.forward(g, x))
    }

    pub fn forward(&self, g: &mut Graph, h: Var) -> Result<Extracted> {
        check_seq(g, h, self.latent, "extractor input")?;
        let b = g.shape(h)[0];
        if self.attention.is_none() {
            let (states, last) = self.summarizer.forward(g, h);
            ensure_finite(g, last, "extractor")?;
            return Ok(Extracted {
                embedding: last,
                steps: states,
                h_time: None,
                h_dim: None,
                temporal_weights: None,
                channel_weights: None,
            });
        }
        let patches = self.embed_patches(g, h)?;
        let temporal = self.temporal_attention(g, patches)?;
        let channel = self.channel_attention(g, temporal.output, b)?;
        let (n, p, e) = (self.latent, self.patches, self.patch_embed);
        // [B·P, N, e] -> [B, P, N·e]
        let flat = g.reshape(channel.output, &[b, p, n * e]);
        let (states, last) = self.summarizer.forward(g, flat);
        ensure_finite(g, last, "extractor")?;
        let steps = g.repeat_steps(states, self.patch_len);
        Ok(Extracted {
            embedding: last,
            steps,
            h_time: Some(temporal.output),
            h_dim: Some(channel.output),
            temporal_weights: Some(temporal.weights),
            channel_weights: Some(channel.weights),
        })
    }
}

fn check_heads(dim: usize, heads: usize) -> Result<()> {
    if heads == 0 || dim % heads != 0 {
        return Err(Error::HeadDivisibility { dim, heads });
    }
    Ok(())
}
