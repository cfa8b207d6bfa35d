//! Second GAN layer: Generator₂ rebuilds hidden sequences `[B, T, N]` from
//! temporal feature vectors; Discriminator₂ scores hidden sequences.

use rand::Rng;

use crate::autoencoder::{check_seq, ensure_finite};
use crate::config::ModelDims;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Gru, GruCell, Linear};
use crate::params::{Component, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReconstructMode {
    /// Each emitted step is fed back as the next input.
    Autoregressive,
    /// Target step `t − 1` is the input at step `t`.
    TeacherForced,
}

/// Generator₂.
///
/// In the default layout the recurrent state starts from a learned linear
/// projection of `H_emb` and the first input is zero. In the
/// "no reconstructor" ablation it instead runs a recurrent layer over a
/// per-step sequence `[B, T, F]`.
#[derive(Clone, Debug)]
pub struct Generator2 {
    pub init: Option<Linear>,
    pub cell: GruCell,
    pub out: Linear,
    pub window: usize,
    pub latent: usize,
    pub feature_vec: usize,
}

impl Generator2 {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, dims: &ModelDims) -> Self {
        let c = Component::Generator2;
        let (n, f) = (dims.latent, dims.feature_vec);
        let (init, cell) = if dims.no_reconstructor {
            (None, GruCell::new(store, rng, "generator2.cell", c, f, f))
        } else {
            (
                Some(Linear::new(store, rng, "generator2.init", c, f, f)),
                GruCell::new(store, rng, "generator2.cell", c, n, f),
            )
        };
        Generator2 {
            init,
            cell,
            out: Linear::new(store, rng, "generator2.out", c, f, n),
            window: dims.window,
            latent: n,
            feature_vec: f,
        }
    }

    pub fn is_sequence_mode(&self) -> bool {
        self.init.is_none()
    }

    fn emit(&self, g: &mut Graph, h: Var) -> Var {
        let y = self.out.forward(g, h);
        g.sigmoid(y)
    }

    /// Rebuilds a `[B, T, N]` hidden sequence from `h_emb` `[B, F]`.
    pub fn reconstruct(
        &self,
        g: &mut Graph,
        h_emb: Var,
        mode: ReconstructMode,
        target: Option<Var>,
    ) -> Result<Var> {
        let init = self.init.as_ref().ok_or_else(|| {
            Error::ShapeMismatch("generator2 is in per-step sequence mode".into())
        })?;
        let s = g.shape(h_emb);
        if s.len() != 2 || s[1] != self.feature_vec {
            return Err(Error::ShapeMismatch(format!(
                "generator2 expects [B, {}], got {s:?}",
                self.feature_vec
            )));
        }
        let b = s[0];
        match (mode, target) {
            (ReconstructMode::TeacherForced, None) => return Err(Error::MissingTarget),
            (ReconstructMode::Autoregressive, Some(_)) => return Err(Error::UnexpectedTarget),
            _ => {}
        }
        let mut h = init.forward(g, h_emb);
        let zero = g.input(Tensor::zeros(&[b, self.latent]));
        let mut outputs = Vec::with_capacity(self.window);
        match target {
            Some(target) => {
                check_seq(g, target, self.latent, "generator2 target")?;
                if g.shape(target)[0] != b || g.shape(target)[1] != self.window {
                    return Err(Error::ShapeMismatch(format!(
                        "target {:?} for batch {b} and length {}",
                        g.shape(target),
                        self.window
                    )));
                }
                // Inputs [0, H_1, …, H_{T-1}] projected in one product.
                let mut inputs = vec![zero];
                for t in 0..self.window - 1 {
                    inputs.push(g.select(target, t));
                }
                let stacked = g.stack(&inputs);
                let gates = self.cell.input_gates(g, stacked);
                for t in 0..self.window {
                    let gt = g.select(gates, t);
                    h = self.cell.step_from_gates(g, gt, h);
                    outputs.push(h);
                }
                let states = g.stack(&outputs);
                let seq = self.emit(g, states);
                ensure_finite(g, seq, "generator2")?;
                Ok(seq)
            }
            None => {
                let mut input = zero;
                for _ in 0..self.window {
                    h = self.cell.step(g, input, h);
                    input = self.emit(g, h);
                    outputs.push(input);
                }
                let seq = g.stack(&outputs);
                ensure_finite(g, seq, "generator2")?;
                Ok(seq)
            }
        }
    }

    /// Ablation path: maps per-step sequences `[B, T, F]` to `[B, T, N]`.
    pub fn reconstruct_sequence(&self, g: &mut Graph, steps: Var) -> Result<Var> {
        if !self.is_sequence_mode() {
            return Err(Error::ShapeMismatch(
                "generator2 expects a feature vector, not a sequence".into(),
            ));
        }
        check_seq(g, steps, self.feature_vec, "generator2 sequence input")?;
        if g.shape(steps)[1] != self.window {
            return Err(Error::ShapeMismatch(format!(
                "sequence length {} != {}",
                g.shape(steps)[1],
                self.window
            )));
        }
        let (states, _) = self.cell.forward_seq(g, steps, None);
        let seq = self.emit(g, states);
        ensure_finite(g, seq, "generator2")?;
        Ok(seq)
    }
}

/// Recurrent classifier over hidden sequences; the final state of the top
/// layer feeds a zero-initialized linear head.
#[derive(Clone, Debug)]
pub struct Discriminator2 {
    pub gru: Gru,
    pub head: Linear,
    pub window: usize,
    pub latent: usize,
}

impl Discriminator2 {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, dims: &ModelDims) -> Self {
        let c = Component::Discriminator2;
        Discriminator2 {
            gru: Gru::new(
                store,
                rng,
                "discriminator2.gru",
                c,
                dims.latent,
                dims.feature_vec,
                dims.discriminator2_layers,
            ),
            head: Linear::zeroed(store, rng, "discriminator2.head", c, dims.feature_vec, 1),
            window: dims.window,
            latent: dims.latent,
        }
    }

    /// Logits `[B, 1]` for `[B, T, N]` sequences.
    pub fn forward(&self, g: &mut Graph, h: Var) -> Result<Var> {
        check_seq(g, h, self.latent, "discriminator2 input")?;
        if g.shape(h)[1] != self.window {
            return Err(Error::ShapeMismatch(format!(
                "discriminator2 expects length {}, got {}",
                self.window,
                g.shape(h)[1]
            )));
        }
        let (_, last) = self.gru.forward(g, h);
        Ok(self.head.forward(g, last))
    }
}
