//! Network building blocks: dense layers, gated recurrent units, multi-head
//! attention and transformer encoder blocks.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::params::{Component, Init, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Affine map `x·W + b` over the trailing axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        component: Component,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            component,
            &[in_dim, out_dim],
            Init::Xavier {
                fan_in: in_dim,
                fan_out: out_dim,
            },
            rng,
        );
        let bias = store.add(format!("{name}.bias"), component, &[out_dim], Init::Zeros, rng);
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// A layer whose weights and bias start at zero (output identically 0).
    pub fn zeroed(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        component: Component,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            component,
            &[in_dim, out_dim],
            Init::Zeros,
            rng,
        );
        let bias = store.add(format!("{name}.bias"), component, &[out_dim], Init::Zeros, rng);
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w);
        g.add_broadcast(y, b)
    }
}

/// Layer normalization with learned gain and offset.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub offset: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        component: Component,
        dim: usize,
    ) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), component, &[dim], Init::Ones, rng),
            offset: store.add(format!("{name}.offset"), component, &[dim], Init::Zeros, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let n = g.layer_norm(x, Self::EPS);
        let gain = g.param(self.gain);
        let offset = g.param(self.offset);
        let y = g.mul_broadcast(n, gain);
        g.add_broadcast(y, offset)
    }
}

/// One gated-recurrent-unit layer with reset/update gates.
///
/// `r = σ(x·W_r + b_r + h·U_r + c_r)`, `z = σ(x·W_z + b_z + h·U_z + c_z)`,
/// `n = tanh(x·W_n + b_n + r ⊙ (h·U_n + c_n))`, `h' = (1 − z) ⊙ n + z ⊙ h`.
/// Gate blocks are packed along the output axis in (r, z, n) order.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub b_input: ParamId,
    pub b_hidden: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        component: Component,
        in_dim: usize,
        hidden: usize,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        GruCell {
            w_input: store.add(
                format!("{name}.w_input"),
                component,
                &[in_dim, 3 * hidden],
                Init::Uniform(bound),
                rng,
            ),
            w_hidden: store.add(
                format!("{name}.w_hidden"),
                component,
                &[hidden, 3 * hidden],
                Init::Uniform(bound),
                rng,
            ),
            b_input: store.add(
                format!("{name}.b_input"),
                component,
                &[3 * hidden],
                Init::Uniform(bound),
                rng,
            ),
            b_hidden: store.add(
                format!("{name}.b_hidden"),
                component,
                &[3 * hidden],
                Init::Uniform(bound),
                rng,
            ),
            in_dim,
            hidden,
        }
    }

    /// Input-side gate pre-activations `x·W + b` for any leading shape.
    pub fn input_gates(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w_input);
        let b = g.param(self.b_input);
        let y = g.matmul(x, w);
        g.add_broadcast(y, b)
    }

    /// One step from precomputed input gates `[batch, 3H]` and state `[batch, H]`.
    pub fn step_from_gates(&self, g: &mut Graph, gates_x: Var, h: Var) -> Var {
        let hd = self.hidden;
        let u = g.param(self.w_hidden);
        let c = g.param(self.b_hidden);
        let gh = g.matmul(h, u);
        let gates_h = g.add_broadcast(gh, c);

        let xr = g.slice_last(gates_x, 0, hd);
        let hr = g.slice_last(gates_h, 0, hd);
        let r_pre = g.add(xr, hr);
        let r = g.sigmoid(r_pre);

        let xz = g.slice_last(gates_x, hd, hd);
        let hz = g.slice_last(gates_h, hd, hd);
        let z_pre = g.add(xz, hz);
        let z = g.sigmoid(z_pre);

        let xn = g.slice_last(gates_x, 2 * hd, hd);
        let hn = g.slice_last(gates_h, 2 * hd, hd);
        let rhn = g.mul(r, hn);
        let n_pre = g.add(xn, rhn);
        let n = g.tanh(n_pre);

        // h' = n + z ⊙ (h − n)
        let diff = g.sub(h, n);
        let zd = g.mul(z, diff);
        g.add(n, zd)
    }

    pub fn step(&self, g: &mut Graph, x: Var, h: Var) -> Var {
        let gates = self.input_gates(g, x);
        self.step_from_gates(g, gates, h)
    }

    /// Runs over `[batch, steps, in]`; returns every state `[batch, steps, H]`
    /// and the final state `[batch, H]`.
    pub fn forward_seq(&self, g: &mut Graph, x: Var, h0: Option<Var>) -> (Var, Var) {
        let (batch, steps) = (g.shape(x)[0], g.shape(x)[1]);
        let gates = self.input_gates(g, x);
        let mut h = match h0 {
            Some(h) => h,
            None => g.input(Tensor::zeros(&[batch, self.hidden])),
        };
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let gt = g.select(gates, t);
            h = self.step_from_gates(g, gt, h);
            states.push(h);
        }
        (g.stack(&states), h)
    }
}

/// Stacked gated recurrent units; zero initial state at every layer.
#[derive(Clone, Debug)]
pub struct Gru {
    pub layers: Vec<GruCell>,
}

impl Gru {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        component: Component,
        in_dim: usize,
        hidden: usize,
        depth: usize,
    ) -> Self {
        assert!(depth >= 1, "recurrent stack needs at least one layer");
        let layers = (0..depth)
            .map(|l| {
                let d_in = if l == 0 { in_dim } else { hidden };
                GruCell::new(store, rng, &format!("{name}.layer{l}"), component, d_in, hidden)
            })
            .collect();
        Gru { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden
    }

    /// Returns the top layer's states `[batch, steps, H]` and its final state.
    pub fn forward(&self, g: &mut Graph, x: Var) -> (Var, Var) {
        let mut input = x;
        let mut last = x;
        for layer in &self.layers {
            let (seq, h) = layer.forward_seq(g, input, None);
            input = seq;
            last = h;
        }
        (input, last)
    }
}

/// Output of one attention call: values and the attention map
/// `[batch·heads, queries, keys]`.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub output: Var,
    pub weights: Var,
}

/// Plain `softmax(scale · Q·Kᵀ)·V` on `[batch, n, d]` tensors.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var, scale: Option<f64>) -> Attended {
    let scores = g.bmm(q, k, true);
    let scores = match scale {
        Some(s) => g.scale(scores, s),
        None => scores,
    };
    let weights = g.softmax(scores);
    let output = g.bmm(weights, v, false);
    Attended { output, weights }
}

/// Multi-head self-attention with output projection.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
    pub scaled: bool,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        component: Component,
        dim: usize,
        heads: usize,
        scaled: bool,
    ) -> Self {
        assert!(heads >= 1 && dim % heads == 0, "width {dim} not divisible by {heads} heads");
        MultiHeadAttention {
            query: Linear::new(store, rng, &format!("{name}.query"), component, dim, dim),
            key: Linear::new(store, rng, &format!("{name}.key"), component, dim, dim),
            value: Linear::new(store, rng, &format!("{name}.value"), component, dim, dim),
            output: Linear::new(store, rng, &format!("{name}.output"), component, dim, dim),
            heads,
            dim,
            scaled,
        }
    }

    fn split_heads(&self, g: &mut Graph, x: Var) -> Var {
        let (b, n) = (g.shape(x)[0], g.shape(x)[1]);
        let dh = self.dim / self.heads;
        let x = g.reshape(x, &[b, n, self.heads, dh]);
        let x = g.permute(x, &[0, 2, 1, 3]);
        g.reshape(x, &[b * self.heads, n, dh])
    }

    /// Self-attention over axis 1 of `[batch, tokens, dim]`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Attended {
        let (b, n) = (g.shape(x)[0], g.shape(x)[1]);
        let dh = self.dim / self.heads;
        let q = self.query.forward(g, x);
        let k = self.key.forward(g, x);
        let v = self.value.forward(g, x);
        let q = self.split_heads(g, q);
        let k = self.split_heads(g, k);
        let v = self.split_heads(g, v);
        let scale = self.scaled.then(|| 1.0 / (dh as f64).sqrt());
        let att = attention(g, q, k, v, scale);
        let merged = g.reshape(att.output, &[b, self.heads, n, dh]);
        let merged = g.permute(merged, &[0, 2, 1, 3]);
        let merged = g.reshape(merged, &[b, n, self.dim]);
        Attended {
            output: self.output.forward(g, merged),
            weights: att.weights,
        }
    }
}

/// Post-norm transformer encoder block: self-attention and a two-layer
/// feed-forward net, each wrapped in a residual connection and layer norm.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub norm2: LayerNorm,
}

impl TransformerBlock {
    pub const FF_MULTIPLIER: usize = 4;

    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        component: Component,
        dim: usize,
        heads: usize,
    ) -> Self {
        let ff = dim * Self::FF_MULTIPLIER;
        TransformerBlock {
            attention: MultiHeadAttention::new(
                store,
                rng,
                &format!("{name}.attention"),
                component,
                dim,
                heads,
                true,
            ),
            norm1: LayerNorm::new(store, rng, &format!("{name}.norm1"), component, dim),
            ff_in: Linear::new(store, rng, &format!("{name}.ff_in"), component, dim, ff),
            ff_out: Linear::new(store, rng, &format!("{name}.ff_out"), component, ff, dim),
            norm2: LayerNorm::new(store, rng, &format!("{name}.norm2"), component, dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let a = self.attention.forward(g, x).output;
        let r1 = g.add(x, a);
        let h1 = self.norm1.forward(g, r1);
        let f = self.ff_in.forward(g, h1);
        let f = g.relu(f);
        let f = self.ff_out.forward(g, f);
        let r2 = g.add(h1, f);
        self.norm2.forward(g, r2)
    }
}

/// Fixed sinusoidal position table `[positions, dim]`:
/// `sin(p / 10000^{2i/dim})` on even columns, `cos` on odd ones.
pub fn sinusoidal_table(positions: usize, dim: usize) -> Tensor {
    Tensor::from_fn(&[positions, dim], |idx| {
        let (p, c) = (idx / dim, idx % dim);
        let pair = (c / 2) as f64;
        let angle = p as f64 / 10000f64.powf(2.0 * pair / dim as f64);
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gru_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, &mut rng, "gru", Component::Probe, 2, 3, 2);
        let a = Tensor::from_fn(&[1, 6, 2], |i| (i as f64 * 0.3).sin());
        let mut b = a.clone();
        b.data_mut()[4 * 2] += 0.5;
        let run = |x: &Tensor| {
            let mut g = Graph::inference(&store);
            let xv = g.input(x.clone());
            let (states, _) = gru.forward(&mut g, xv);
            g.value(states).clone()
        };
        let (ha, hb) = (run(&a), run(&b));
        assert_eq!(&ha.data()[..4 * 3], &hb.data()[..4 * 3]);
        assert_ne!(&ha.data()[4 * 3..], &hb.data()[4 * 3..]);
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, &mut rng, "mha", Component::Probe, 8, 4, true);
        let mut g = Graph::inference(&store);
        let x = g.input(Tensor::from_fn(&[3, 5, 8], |i| (i as f64 * 0.17).cos()));
        let out = mha.forward(&mut g, x);
        assert_eq!(g.shape(out.output), &[3, 5, 8]);
        assert_eq!(g.shape(out.weights), &[12, 5, 5]);
        for row in g.value(out.weights).data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn transformer_block_keeps_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let tf = TransformerBlock::new(&mut store, &mut rng, "tf", Component::Probe, 4, 2);
        let mut g = Graph::inference(&store);
        let x = g.input(Tensor::from_fn(&[2, 7, 4], |i| i as f64 / 10.0));
        let y = tf.forward(&mut g, x);
        assert_eq!(g.shape(y), &[2, 7, 4]);
        assert!(g.value(y).is_finite());
    }

    #[test]
    fn position_table_values() {
        let t = sinusoidal_table(6, 4);
        assert_eq!(t.shape(), &[6, 4]);
        assert_eq!(t.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((t.row(2)[0] - 2f64.sin()).abs() < 1e-15);
        assert!((t.row(2)[3] - (2.0 / 100.0f64).cos()).abs() < 1e-15);
        assert_eq!(t, sinusoidal_table(6, 4));
    }
}
