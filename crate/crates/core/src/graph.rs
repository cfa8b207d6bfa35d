//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] on a scalar node walks the record in reverse and
//! returns gradients for every node that depends on a trainable parameter
//! or a [`Graph::variable`] leaf.

use std::collections::{HashMap, HashSet};

use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, inverse_permutation, MatView, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBroadcast(Var, Var),
    MulBroadcast(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Softmax(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Select { x: Var, index: usize },
    Stack(Vec<Var>),
    SliceLast { x: Var, start: usize },
    ConcatLast(Vec<Var>),
    MovingAverage { x: Var, window: usize },
    RepeatSteps { x: Var, times: usize },
    Mean(Var),
    Mse(Var, Var),
    Mae(Var, Var),
    BceWithLogits { logits: Var, targets: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    /// Gradient of the loss with respect to a parameter, if it was trainable
    /// in the graph and reached by the loss.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params
            .get(&id)
            .and_then(|v| self.by_node[v.0].as_ref())
    }

    pub fn var(&self, v: Var) -> Option<&Tensor> {
        self.by_node[v.0].as_ref()
    }
}

/// One forward pass worth of recorded operations.
pub struct Graph<'p> {
    nodes: Vec<Node>,
    store: &'p ParamStore,
    param_vars: HashMap<ParamId, Var>,
    trainable: Option<HashSet<ParamId>>,
}

impl<'p> Graph<'p> {
    /// A graph in which every parameter of `store` is trainable.
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            nodes: Vec::new(),
            store,
            param_vars: HashMap::new(),
            trainable: None,
        }
    }

    /// A graph in which only `trainable` parameters receive gradients; all
    /// others act as constants.
    pub fn with_trainable(store: &'p ParamStore, trainable: &[ParamId]) -> Self {
        Graph {
            trainable: Some(trainable.iter().copied().collect()),
            ..Graph::new(store)
        }
    }

    /// A graph with no trainable parameters (pure inference).
    pub fn inference(store: &'p ParamStore) -> Self {
        Graph::with_trainable(store, &[])
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that receives a gradient (used for input sensitivities).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// The node holding parameter `id`; created once per graph.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let trainable = self.trainable.as_ref().is_none_or(|s| s.contains(&id));
        let v = self.push(self.store.get(id).clone(), Op::Leaf, trainable);
        self.param_vars.insert(id, v);
        v
    }

    // ---- linear algebra ----

    /// `x[.., k] · w[k, n] -> [.., n]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Var {
        let (xv, wv) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        assert_eq!(wv.ndim(), 2, "matmul weight must be 2-D, got {:?}", wv.shape());
        let k = xv.last_dim();
        assert_eq!(k, wv.dim(0), "matmul {:?} x {:?}", xv.shape(), wv.shape());
        let n = wv.dim(1);
        let rows = xv.rows();
        let mut out = vec![0.0; rows * n];
        gemm(
            MatView::new(xv.data(), rows, k),
            MatView::new(wv.data(), k, n),
            &mut out,
            false,
        );
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let ng = self.ng(x) || self.ng(w);
        self.push(Tensor::new(&shape, out), Op::MatMul(x, w), ng)
    }

    /// Batched `a[b, m, k] · b[b, k, n]` (or `· b[b, n, k]ᵀ` when `trans_b`).
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.ndim(), 3);
        assert_eq!(bv.ndim(), 3);
        let (batch, m, k) = (av.dim(0), av.dim(1), av.dim(2));
        assert_eq!(bv.dim(0), batch, "bmm batch mismatch");
        let n = if trans_b {
            assert_eq!(bv.dim(2), k, "bmm {:?} x {:?}ᵀ", av.shape(), bv.shape());
            bv.dim(1)
        } else {
            assert_eq!(bv.dim(1), k, "bmm {:?} x {:?}", av.shape(), bv.shape());
            bv.dim(2)
        };
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            let am = MatView::new(&av.data()[i * m * k..(i + 1) * m * k], m, k);
            let bslice = &bv.data()[i * k * n..(i + 1) * k * n];
            let bm = if trans_b {
                MatView::new(bslice, n, k).t()
            } else {
                MatView::new(bslice, k, n)
            };
            gemm(am, bm, &mut out[i * m * n..(i + 1) * m * n], false);
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(
            Tensor::new(&[batch, m, n], out),
            Op::BatchMatMul { a, b, trans_b },
            ng,
        )
    }

    // ---- elementwise ----

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        Tensor::new(
            av.shape(),
            av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip(a, b, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(t, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip(a, b, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(t, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip(a, b, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(t, Op::Mul(a, b), ng)
    }

    fn check_suffix(&self, a: Var, b: Var) -> usize {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(
            av.shape().ends_with(bv.shape()),
            "cannot broadcast {:?} onto {:?}",
            bv.shape(),
            av.shape()
        );
        bv.len()
    }

    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Var {
        let n = self.check_suffix(a, b);
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv.data()[i % n])
            .collect();
        let t = Tensor::new(av.shape(), data);
        let ng = self.ng(a) || self.ng(b);
        self.push(t, Op::AddBroadcast(a, b), ng)
    }

    /// `a * b` where `b`'s shape is a trailing suffix of `a`'s.
    pub fn mul_broadcast(&mut self, a: Var, b: Var) -> Var {
        let n = self.check_suffix(a, b);
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * bv.data()[i % n])
            .collect();
        let t = Tensor::new(av.shape(), data);
        let ng = self.ng(a) || self.ng(b);
        self.push(t, Op::MulBroadcast(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.nodes[a.0].value.map(|x| x * c);
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, c), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.nodes[a.0].value.map(sigmoid);
        let ng = self.ng(a);
        self.push(t, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.nodes[a.0].value.map(f64::tanh);
        let ng = self.ng(a);
        self.push(t, Op::Tanh(a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let t = self.nodes[a.0]
            .value
            .map(|x| if x > 0.0 { x } else { slope * x });
        let ng = self.ng(a);
        self.push(t, Op::LeakyRelu(a, slope), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let w = av.last_dim();
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(w) {
            softmax_in_place(row);
        }
        let t = Tensor::new(av.shape(), out);
        let ng = self.ng(a);
        self.push(t, Op::Softmax(a), ng)
    }

    /// Normalizes each trailing-axis row to zero mean and unit variance.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let xv = &self.nodes[x.0].value;
        let w = xv.last_dim();
        let mut out = xv.data().to_vec();
        let mut inv_std = Vec::with_capacity(xv.rows());
        for row in out.chunks_mut(w) {
            let mean = row.iter().sum::<f64>() / w as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
            let is = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        let t = Tensor::new(xv.shape(), out);
        let ng = self.ng(x);
        self.push(t, Op::LayerNorm { x, inv_std }, ng)
    }

    // ---- shape manipulation ----

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.nodes[a.0].value.clone().reshape(shape);
        let ng = self.ng(a);
        self.push(t, Op::Reshape(a), ng)
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Var {
        let t = self.nodes[a.0].value.permute(axes);
        let ng = self.ng(a);
        self.push(t, Op::Permute(a, axes.to_vec()), ng)
    }

    /// `x[:, index, ..]` of a tensor with at least two axes.
    pub fn select(&mut self, x: Var, index: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        let (b, steps) = (xv.dim(0), xv.dim(1));
        assert!(index < steps, "select index {index} out of {steps}");
        let inner: usize = xv.shape()[2..].iter().product();
        let mut out = Vec::with_capacity(b * inner);
        for i in 0..b {
            let start = (i * steps + index) * inner;
            out.extend_from_slice(&xv.data()[start..start + inner]);
        }
        let mut shape = vec![b];
        shape.extend_from_slice(&xv.shape()[2..]);
        let ng = self.ng(x);
        self.push(Tensor::new(&shape, out), Op::Select { x, index }, ng)
    }

    /// Stacks equally shaped `[b, ..]` tensors along a new axis 1.
    pub fn stack(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "stack of zero tensors");
        let first = self.nodes[xs[0].0].value.shape().to_vec();
        let b = first[0];
        let inner: usize = first[1..].iter().product();
        let mut out = vec![0.0; b * xs.len() * inner];
        for (t, &x) in xs.iter().enumerate() {
            let xv = &self.nodes[x.0].value;
            assert_eq!(xv.shape(), &first[..], "stack shape mismatch");
            for i in 0..b {
                let dst = (i * xs.len() + t) * inner;
                out[dst..dst + inner].copy_from_slice(&xv.data()[i * inner..(i + 1) * inner]);
            }
        }
        let mut shape = vec![b, xs.len()];
        shape.extend_from_slice(&first[1..]);
        let ng = xs.iter().any(|&x| self.ng(x));
        self.push(Tensor::new(&shape, out), Op::Stack(xs.to_vec()), ng)
    }

    /// `x[.., start..start + len]` on the trailing axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        let w = xv.last_dim();
        assert!(start + len <= w, "slice {start}+{len} beyond width {w}");
        let mut out = Vec::with_capacity(xv.rows() * len);
        for row in xv.data().chunks(w) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let ng = self.ng(x);
        self.push(Tensor::new(&shape, out), Op::SliceLast { x, start }, ng)
    }

    /// Concatenates along the trailing axis; leading shapes must agree.
    pub fn concat_last(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let lead = self.nodes[xs[0].0].value.shape().split_last().unwrap().1.to_vec();
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = xs.iter().map(|x| self.nodes[x.0].value.last_dim()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                let xv = &self.nodes[x.0].value;
                assert_eq!(xv.shape().split_last().unwrap().1, &lead[..]);
                out.extend_from_slice(&xv.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let ng = xs.iter().any(|&x| self.ng(x));
        self.push(Tensor::new(&shape, out), Op::ConcatLast(xs.to_vec()), ng)
    }

    /// Centered moving average along axis 1 of `[b, l, d]` with edge
    /// replication; `window` must be odd.
    pub fn moving_average(&mut self, x: Var, window: usize) -> Var {
        let t = moving_average_axis1(&self.nodes[x.0].value, window);
        let ng = self.ng(x);
        self.push(t, Op::MovingAverage { x, window }, ng)
    }

    /// Repeats every step of `[b, s, d]` `times` times: `[b, s * times, d]`.
    pub fn repeat_steps(&mut self, x: Var, times: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        let (b, s) = (xv.dim(0), xv.dim(1));
        let inner: usize = xv.shape()[2..].iter().product();
        let mut out = Vec::with_capacity(xv.len() * times);
        for i in 0..b {
            for j in 0..s {
                let src = &xv.data()[(i * s + j) * inner..(i * s + j + 1) * inner];
                for _ in 0..times {
                    out.extend_from_slice(src);
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape[1] = s * times;
        let ng = self.ng(x);
        self.push(Tensor::new(&shape, out), Op::RepeatSteps { x, times }, ng)
    }

    // ---- reductions and losses ----

    pub fn mean(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let m = av.data().iter().sum::<f64>() / av.len() as f64;
        let ng = self.ng(a);
        self.push(Tensor::scalar(m), Op::Mean(a), ng)
    }

    /// Mean of squared differences over every element.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.zip(a, b, |x, y| (x - y) * (x - y));
        let m = d.data().iter().sum::<f64>() / d.len() as f64;
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::scalar(m), Op::Mse(a, b), ng)
    }

    /// Mean of absolute differences over every element.
    pub fn mae(&mut self, a: Var, b: Var) -> Var {
        let d = self.zip(a, b, |x, y| (x - y).abs());
        let m = d.data().iter().sum::<f64>() / d.len() as f64;
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::scalar(m), Op::Mae(a, b), ng)
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Var {
        let lv = &self.nodes[logits.0].value;
        assert_eq!(lv.len(), targets.len(), "bce target count mismatch");
        let loss = bce_with_logits(lv.data(), targets);
        let ng = self.ng(logits);
        self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            ng,
        )
    }

    // ---- backward ----

    /// Back-propagates from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients {
            by_node: grads,
            params: self.param_vars.clone(),
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce() -> Tensor) {
        if self.nodes[v.0].needs_grad {
            let g = f();
            self.acc(grads, v, g);
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(x, w) => {
                let (xv, wv) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                let (k, n) = (wv.dim(0), wv.dim(1));
                let rows = xv.rows();
                self.acc_with(grads, *x, || {
                    let mut dx = vec![0.0; rows * k];
                    gemm(
                        MatView::new(g.data(), rows, n),
                        MatView::new(wv.data(), k, n).t(),
                        &mut dx,
                        false,
                    );
                    Tensor::new(xv.shape(), dx)
                });
                self.acc_with(grads, *w, || {
                    let mut dw = vec![0.0; k * n];
                    gemm(
                        MatView::new(xv.data(), rows, k).t(),
                        MatView::new(g.data(), rows, n),
                        &mut dw,
                        false,
                    );
                    Tensor::new(wv.shape(), dw)
                });
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (batch, m, k) = (av.dim(0), av.dim(1), av.dim(2));
                let n = out.dim(2);
                self.acc_with(grads, *a, || {
                    let mut da = vec![0.0; batch * m * k];
                    for s in 0..batch {
                        let gm = MatView::new(&g.data()[s * m * n..(s + 1) * m * n], m, n);
                        let bslice = &bv.data()[s * k * n..(s + 1) * k * n];
                        // C = A·B  => dA = dC·Bᵀ ; C = A·Bᵀ => dA = dC·B
                        let bm = if *trans_b {
                            MatView::new(bslice, n, k)
                        } else {
                            MatView::new(bslice, k, n).t()
                        };
                        gemm(gm, bm, &mut da[s * m * k..(s + 1) * m * k], false);
                    }
                    Tensor::new(av.shape(), da)
                });
                self.acc_with(grads, *b, || {
                    let mut db = vec![0.0; batch * k * n];
                    for s in 0..batch {
                        let gm = MatView::new(&g.data()[s * m * n..(s + 1) * m * n], m, n);
                        let am = MatView::new(&av.data()[s * m * k..(s + 1) * m * k], m, k);
                        let dst = &mut db[s * k * n..(s + 1) * k * n];
                        if *trans_b {
                            // dB[n,k] = dCᵀ·A
                            gemm(gm.t(), am, dst, false);
                        } else {
                            // dB[k,n] = Aᵀ·dC
                            gemm(am.t(), gm, dst, false);
                        }
                    }
                    Tensor::new(bv.shape(), db)
                });
            }
            Op::Add(a, b) => {
                self.acc_with(grads, *a, || g.clone());
                self.acc_with(grads, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.acc_with(grads, *a, || g.clone());
                self.acc_with(grads, *b, || g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                self.acc_with(grads, *a, || hadamard(g, bv));
                self.acc_with(grads, *b, || hadamard(g, av));
            }
            Op::AddBroadcast(a, b) => {
                self.acc_with(grads, *a, || g.clone());
                self.acc_with(grads, *b, || {
                    let bv = &self.nodes[b.0].value;
                    let n = bv.len();
                    let mut db = vec![0.0; n];
                    for (j, &x) in g.data().iter().enumerate() {
                        db[j % n] += x;
                    }
                    Tensor::new(bv.shape(), db)
                });
            }
            Op::MulBroadcast(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let n = bv.len();
                self.acc_with(grads, *a, || {
                    Tensor::new(
                        av.shape(),
                        g.data()
                            .iter()
                            .enumerate()
                            .map(|(j, &x)| x * bv.data()[j % n])
                            .collect(),
                    )
                });
                self.acc_with(grads, *b, || {
                    let mut db = vec![0.0; n];
                    for (j, (&x, &y)) in g.data().iter().zip(av.data()).enumerate() {
                        db[j % n] += x * y;
                    }
                    Tensor::new(bv.shape(), db)
                });
            }
            Op::Scale(a, c) => self.acc_with(grads, *a, || g.map(|x| x * c)),
            Op::Sigmoid(a) => self.acc_with(grads, *a, || {
                Tensor::new(
                    out.shape(),
                    g.data()
                        .iter()
                        .zip(out.data())
                        .map(|(&d, &y)| d * y * (1.0 - y))
                        .collect(),
                )
            }),
            Op::Tanh(a) => self.acc_with(grads, *a, || {
                Tensor::new(
                    out.shape(),
                    g.data()
                        .iter()
                        .zip(out.data())
                        .map(|(&d, &y)| d * (1.0 - y * y))
                        .collect(),
                )
            }),
            Op::LeakyRelu(a, slope) => self.acc_with(grads, *a, || {
                let av = &self.nodes[a.0].value;
                Tensor::new(
                    out.shape(),
                    g.data()
                        .iter()
                        .zip(av.data())
                        .map(|(&d, &x)| if x > 0.0 { d } else { d * slope })
                        .collect(),
                )
            }),
            Op::Softmax(a) => self.acc_with(grads, *a, || {
                let w = out.last_dim();
                let mut dx = Vec::with_capacity(out.len());
                for (gr, yr) in g.data().chunks(w).zip(out.data().chunks(w)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    dx.extend(gr.iter().zip(yr).map(|(&d, &y)| y * (d - dot)));
                }
                Tensor::new(out.shape(), dx)
            }),
            Op::LayerNorm { x, inv_std } => self.acc_with(grads, *x, || {
                let w = out.last_dim();
                let mut dx = Vec::with_capacity(out.len());
                for ((gr, yr), is) in g.data().chunks(w).zip(out.data().chunks(w)).zip(inv_std) {
                    let mg = gr.iter().sum::<f64>() / w as f64;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / w as f64;
                    dx.extend(gr.iter().zip(yr).map(|(&d, &y)| is * (d - mg - y * mgy)));
                }
                Tensor::new(out.shape(), dx)
            }),
            Op::Reshape(a) => self.acc_with(grads, *a, || {
                g.clone().reshape(self.nodes[a.0].value.shape())
            }),
            Op::Permute(a, axes) => {
                self.acc_with(grads, *a, || g.permute(&inverse_permutation(axes)))
            }
            Op::Select { x, index } => self.acc_with(grads, *x, || {
                let xv = &self.nodes[x.0].value;
                let (b, steps) = (xv.dim(0), xv.dim(1));
                let inner = g.len() / b;
                let mut dx = Tensor::zeros(xv.shape());
                for s in 0..b {
                    let dst = (s * steps + index) * inner;
                    dx.data_mut()[dst..dst + inner]
                        .copy_from_slice(&g.data()[s * inner..(s + 1) * inner]);
                }
                dx
            }),
            Op::Stack(xs) => {
                let b = out.dim(0);
                let steps = xs.len();
                let inner = out.len() / (b * steps);
                for (t, &x) in xs.iter().enumerate() {
                    self.acc_with(grads, x, || {
                        let mut dx = Vec::with_capacity(b * inner);
                        for s in 0..b {
                            let src = (s * steps + t) * inner;
                            dx.extend_from_slice(&g.data()[src..src + inner]);
                        }
                        Tensor::new(self.nodes[x.0].value.shape(), dx)
                    });
                }
            }
            Op::SliceLast { x, start } => self.acc_with(grads, *x, || {
                let xv = &self.nodes[x.0].value;
                let (w, len) = (xv.last_dim(), out.last_dim());
                let mut dx = Tensor::zeros(xv.shape());
                for (r, gr) in g.data().chunks(len).enumerate() {
                    dx.data_mut()[r * w + start..r * w + start + len].copy_from_slice(gr);
                }
                dx
            }),
            Op::ConcatLast(xs) => {
                let total = out.last_dim();
                let rows = out.rows();
                let mut offset = 0;
                for &x in xs {
                    let w = self.nodes[x.0].value.last_dim();
                    self.acc_with(grads, x, || {
                        let mut dx = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dx.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        Tensor::new(self.nodes[x.0].value.shape(), dx)
                    });
                    offset += w;
                }
            }
            Op::MovingAverage { x, window } => self.acc_with(grads, *x, || {
                moving_average_axis1_adjoint(g, *window)
            }),
            Op::RepeatSteps { x, times } => self.acc_with(grads, *x, || {
                let xv = &self.nodes[x.0].value;
                let (b, s) = (xv.dim(0), xv.dim(1));
                let inner = xv.len() / (b * s);
                let mut dx = Tensor::zeros(xv.shape());
                for i in 0..b {
                    for j in 0..s {
                        let dst = (i * s + j) * inner;
                        for r in 0..*times {
                            let src = (i * s * times + j * times + r) * inner;
                            for c in 0..inner {
                                dx.data_mut()[dst + c] += g.data()[src + c];
                            }
                        }
                    }
                }
                dx
            }),
            Op::Mean(a) => self.acc_with(grads, *a, || {
                let av = &self.nodes[a.0].value;
                Tensor::full(av.shape(), g.item() / av.len() as f64)
            }),
            Op::Mse(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let c = 2.0 * g.item() / av.len() as f64;
                let diff = || {
                    Tensor::new(
                        av.shape(),
                        av.data().iter().zip(bv.data()).map(|(x, y)| c * (x - y)).collect(),
                    )
                };
                self.acc_with(grads, *a, diff);
                self.acc_with(grads, *b, || diff().map(|x| -x));
            }
            Op::Mae(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let c = g.item() / av.len() as f64;
                let sign = || {
                    Tensor::new(
                        av.shape(),
                        av.data()
                            .iter()
                            .zip(bv.data())
                            .map(|(x, y)| c * sign(x - y))
                            .collect(),
                    )
                };
                self.acc_with(grads, *a, sign);
                self.acc_with(grads, *b, || sign().map(|x| -x));
            }
            Op::BceWithLogits { logits, targets } => self.acc_with(grads, *logits, || {
                let lv = &self.nodes[logits.0].value;
                let c = g.item() / lv.len() as f64;
                Tensor::new(
                    lv.shape(),
                    lv.data()
                        .iter()
                        .zip(targets)
                        .map(|(&x, &t)| c * (sigmoid(x) - t))
                        .collect(),
                )
            }),
        }
    }
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::new(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
    )
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Mean binary cross-entropy of `sigmoid(logits)` against `targets`,
/// computed as `max(x, 0) - x·t + ln(1 + e^{-|x|})`.
pub fn bce_with_logits(logits: &[f64], targets: &[f64]) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(targets)
        .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
        .sum();
    total / logits.len() as f64
}

/// Centered moving average along axis 1 of `[b, l, d]` with replicated
/// edges.
pub fn moving_average_axis1(x: &Tensor, window: usize) -> Tensor {
    assert!(window % 2 == 1, "moving average window must be odd");
    let (b, l) = (x.dim(0), x.dim(1));
    let d = x.len() / (b * l);
    let half = (window / 2) as isize;
    let scale = 1.0 / window as f64;
    let mut out = vec![0.0; x.len()];
    for s in 0..b {
        let base = s * l * d;
        for i in 0..l {
            let dst = base + i * d;
            for j in -half..=half {
                let src_t = (i as isize + j).clamp(0, l as isize - 1) as usize;
                let src = base + src_t * d;
                for c in 0..d {
                    out[dst + c] += x.data()[src + c];
                }
            }
            for c in 0..d {
                out[dst + c] *= scale;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

fn moving_average_axis1_adjoint(g: &Tensor, window: usize) -> Tensor {
    let (b, l) = (g.dim(0), g.dim(1));
    let d = g.len() / (b * l);
    let half = (window / 2) as isize;
    let scale = 1.0 / window as f64;
    let mut dx = vec![0.0; g.len()];
    for s in 0..b {
        let base = s * l * d;
        for i in 0..l {
            let src = base + i * d;
            for j in -half..=half {
                let dst_t = (i as isize + j).clamp(0, l as isize - 1) as usize;
                let dst = base + dst_t * d;
                for c in 0..d {
                    dx[dst + c] += g.data()[src + c] * scale;
                }
            }
        }
    }
    Tensor::new(g.shape(), dx)
}
