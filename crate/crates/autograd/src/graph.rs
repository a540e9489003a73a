//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during one forward pass.
//! Nodes are appended in evaluation order, so a reverse sweep over the
//! node list is a valid topological order for the backward pass.

use crate::attention::{attention_backward, attention_forward, AttnShape};
use crate::conv::{conv_backward, conv_forward, ConvGeom};
use crate::norm::{
    batch_norm_backward, batch_norm_forward, batch_stats, layer_norm_backward, layer_norm_forward,
    NormCache,
};
use crate::params::{BufferId, ParamId, ParamStore, StatUpdate};
use crate::real::{gemm, Mat, MatMut, Real};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for normalization; running estimates are updated.
    Train,
    /// Running statistics for normalization; no side effects.
    Eval,
}

enum Op<T> {
    Input,
    Param,
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Reshape(Var),
    /// `x` of shape `(.., n)` plus `row` of shape `(n)` broadcast over leading dims.
    AddRow { x: Var, row: Var },
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, batch: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, cache: NormCache<T>, batch_stats: bool },
    LayerNorm { x: Var, gamma: Var, beta: Var, cache: NormCache<T> },
    Linear { x: Var, w: Var, b: Option<Var> },
    Attention { q: Var, k: Var, v: Var, probs: Vec<T>, shape: AttnShape },
    /// Channel concatenation of `(B, Ca, S)` and `(B, Cb, S)`.
    Concat { a: Var, b: Var },
    /// `(B, C, S..)` → `(B, C)`.
    MeanSpatial(Var),
}

struct Node<T> {
    value: Vec<T>,
    shape: Vec<usize>,
    op: Op<T>,
}

/// One forward pass worth of recorded operations.
pub struct Graph<'s, T: Real> {
    store: &'s ParamStore<T>,
    mode: Mode,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    stat_updates: Vec<StatUpdate<T>>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    params: Vec<Option<Var>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a parameter; `None` if it did not take part
    /// in the forward pass.
    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        let v = self.params.get(id.0).copied().flatten()?;
        self.nodes[v.0].as_deref()
    }

    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0)?.as_deref()
    }

    /// Per-parameter gradients in store order.
    pub fn into_param_grads(mut self) -> Vec<Option<Vec<T>>> {
        let params = std::mem::take(&mut self.params);
        params.into_iter().map(|v| v.and_then(|v| self.nodes[v.0].take())).collect()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, g: &[T]) {
    match slot {
        Some(acc) => {
            for (a, &b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => *slot = Some(g.to_vec()),
    }
}

impl<'s, T: Real> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>, mode: Mode) -> Self {
        Self {
            store,
            mode,
            nodes: Vec::new(),
            param_vars: vec![None; store.num_params()],
            stat_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op<T>) -> Var {
        debug_assert_eq!(value.len(), numel(&shape));
        self.nodes.push(Node { value, shape, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Running-statistic updates collected in training mode.
    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate<T>> {
        std::mem::take(&mut self.stat_updates)
    }

    pub fn input(&mut self, data: Vec<T>, shape: &[usize]) -> Var {
        assert_eq!(data.len(), numel(shape), "input data/shape mismatch");
        self.push(data, shape.to_vec(), Op::Input)
    }

    /// Leaf node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let p = self.store.param(id);
        let v = self.push(p.data.clone(), p.shape.clone(), Op::Param);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push(value, shape, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.push(value, shape, Op::Mul(a, b))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let shape = self.shape(x).to_vec();
        self.push(value, shape, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).iter().map(|&v| T::one() / (T::one() + (-v).exp())).collect();
        let shape = self.shape(x).to_vec();
        self.push(value, shape, Op::Sigmoid(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        assert_eq!(numel(self.shape(x)), numel(shape), "reshape element count");
        let value = self.value(x).to_vec();
        self.push(value, shape.to_vec(), Op::Reshape(x))
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let n = numel(self.shape(row));
        assert_eq!(numel(self.shape(x)) % n, 0, "add_row broadcast mismatch");
        let r = self.value(row).to_vec();
        let value = self.value(x).chunks(n).flat_map(|c| c.iter().zip(&r).map(|(&a, &b)| a + b)).collect();
        let shape = self.shape(x).to_vec();
        self.push(value, shape, Op::AddRow { x, row })
    }

    /// `x`: `(B, C, D, H, W)`; weight shape `(O, C/groups, kd, kh, kw)`.
    pub fn conv3d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: [usize; 3],
        padding: [usize; 3],
        groups: usize,
    ) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 5, "conv3d expects a 5D input, got {xs:?}");
        assert_eq!(ws.len(), 5, "conv3d expects a 5D weight");
        assert_eq!(xs[1], ws[1] * groups, "conv3d channel mismatch: input {xs:?}, weight {ws:?}");
        let geom = ConvGeom {
            in_channels: xs[1],
            out_channels: ws[0],
            groups,
            kernel: [ws[2], ws[3], ws[4]],
            stride,
            padding,
            in_dims: [xs[2], xs[3], xs[4]],
        };
        let bias = b.map(|b| self.value(b));
        let value = conv_forward(self.value(x), self.value(w), bias, xs[0], &geom);
        let od = geom.out_dims();
        self.push(value, vec![xs[0], ws[0], od[0], od[1], od[2]], Op::Conv { x, w, b, geom, batch: xs[0] })
    }

    /// Normalizes `(B, C, ...)` per channel. Uses batch statistics in
    /// training mode (recording a running-stat update) and the stored
    /// running estimates in evaluation mode.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        running_mean: BufferId,
        running_var: BufferId,
        momentum: f64,
        eps: f64,
    ) -> Var {
        let gv = self.param(gamma);
        let bv = self.param(beta);
        let shape = self.shape(x).to_vec();
        let (batch, channels) = (shape[0], shape[1]);
        let spatial = numel(&shape[2..]);
        let (mean, var, train) = match self.mode {
            Mode::Train => {
                let st = batch_stats(self.value(x), batch, channels, spatial);
                self.stat_updates.push(StatUpdate {
                    mean_buf: running_mean,
                    var_buf: running_var,
                    momentum,
                    batch_mean: st.mean.clone(),
                    batch_var: st.var_unbiased,
                });
                (st.mean, st.var, true)
            }
            Mode::Eval => (
                self.store.buffer(running_mean).data.clone(),
                self.store.buffer(running_var).data.clone(),
                false,
            ),
        };
        let (value, cache) = batch_norm_forward(
            self.value(x),
            self.value(gv),
            self.value(bv),
            &mean,
            &var,
            eps,
            batch,
            channels,
            spatial,
        );
        self.push(value, shape, Op::BatchNorm { x, gamma: gv, beta: bv, cache, batch_stats: train })
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let width = *self.shape(x).last().expect("layer_norm on scalar");
        assert_eq!(numel(self.shape(gamma)), width, "layer_norm width mismatch");
        let (value, cache) = layer_norm_forward(self.value(x), self.value(gamma), self.value(beta), eps, width);
        let shape = self.shape(x).to_vec();
        self.push(value, shape, Op::LayerNorm { x, gamma, beta, cache })
    }

    /// `y = x·wᵀ + b` over the trailing dimension; `w` is `(out, in)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let fan_in = *xs.last().expect("linear on scalar");
        assert_eq!(ws.len(), 2, "linear weight must be 2D");
        assert_eq!(ws[1], fan_in, "linear fan-in mismatch: input {xs:?}, weight {ws:?}");
        let rows = numel(&xs) / fan_in;
        let out = ws[0];
        let mut value = vec![T::zero(); rows * out];
        if let Some(b) = b {
            let bias = self.value(b);
            for r in value.chunks_mut(out) {
                r.copy_from_slice(bias);
            }
        }
        gemm(
            T::one(),
            Mat::new(self.value(x), rows, fan_in),
            Mat::new(self.value(w), out, fan_in).t(),
            T::one(),
            MatMut::new(&mut value, rows, out),
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = out;
        self.push(value, shape, Op::Linear { x, w, b })
    }

    /// Multi-head attention core on `(B, L, E)` projections.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let s = self.shape(q).to_vec();
        assert_eq!(s.len(), 3, "attention expects (B, L, E)");
        assert!(self.shape(k) == s.as_slice() && self.shape(v) == s.as_slice(), "q/k/v shape mismatch");
        let shape = AttnShape { batch: s[0], len: s[1], embed: s[2], heads };
        let (value, probs) = attention_forward(self.value(q), self.value(k), self.value(v), shape);
        self.push(value, s, Op::Attention { q, k, v, probs, shape })
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        assert!(sa.len() >= 2 && sa[0] == sb[0] && sa[2..] == sb[2..], "concat shape mismatch {sa:?} {sb:?}");
        let spatial = numel(&sa[2..]);
        let (ca, cb) = (sa[1], sb[1]);
        let mut value = Vec::with_capacity(numel(&sa) + numel(&sb));
        for n in 0..sa[0] {
            value.extend_from_slice(&self.value(a)[n * ca * spatial..(n + 1) * ca * spatial]);
            value.extend_from_slice(&self.value(b)[n * cb * spatial..(n + 1) * cb * spatial]);
        }
        let mut shape = sa;
        shape[1] = ca + cb;
        self.push(value, shape, Op::Concat { a, b })
    }

    pub fn mean_spatial(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let spatial = numel(&s[2..]);
        let inv = T::one() / T::of(spatial as f64);
        let value = self.value(x).chunks(spatial).map(|c| c.iter().copied().sum::<T>() * inv).collect();
        self.push(value, vec![s[0], s[1]], Op::MeanSpatial(x))
    }

    /// Reverse sweep from `root` seeded with `seed` (dL/droot).
    pub fn backward(&self, root: Var, seed: &[T]) -> Gradients<T> {
        assert_eq!(seed.len(), self.nodes[root.0].value.len(), "seed length");
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed.to_vec());
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input | Op::Param => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], &g);
                    accumulate(&mut grads[b.0], &g);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<T> = g.iter().zip(self.value(*b)).map(|(&d, &y)| d * y).collect();
                    let gb: Vec<T> = g.iter().zip(self.value(*a)).map(|(&d, &x)| d * x).collect();
                    accumulate(&mut grads[a.0], &ga);
                    accumulate(&mut grads[b.0], &gb);
                }
                Op::Relu(x) => {
                    let gx: Vec<T> =
                        g.iter().zip(&node.value).map(|(&d, &y)| if y > T::zero() { d } else { T::zero() }).collect();
                    accumulate(&mut grads[x.0], &gx);
                }
                Op::Sigmoid(x) => {
                    let gx: Vec<T> = g.iter().zip(&node.value).map(|(&d, &y)| d * y * (T::one() - y)).collect();
                    accumulate(&mut grads[x.0], &gx);
                }
                Op::Reshape(x) => accumulate(&mut grads[x.0], &g),
                Op::AddRow { x, row } => {
                    let n = self.value(*row).len();
                    let mut gr = vec![T::zero(); n];
                    for c in g.chunks(n) {
                        for (a, &b) in gr.iter_mut().zip(c) {
                            *a += b;
                        }
                    }
                    accumulate(&mut grads[x.0], &g);
                    accumulate(&mut grads[row.0], &gr);
                }
                Op::Conv { x, w, b, geom, batch } => {
                    let mut dw = vec![T::zero(); self.value(*w).len()];
                    let mut db = b.map(|b| vec![T::zero(); self.value(b).len()]);
                    let dx = conv_backward(
                        self.value(*x),
                        self.value(*w),
                        &g,
                        *batch,
                        geom,
                        Some(&mut dw),
                        db.as_deref_mut(),
                        self.needs_grad(*x),
                    );
                    accumulate(&mut grads[w.0], &dw);
                    if let (Some(b), Some(db)) = (b, db) {
                        accumulate(&mut grads[b.0], &db);
                    }
                    if let Some(dx) = dx {
                        accumulate(&mut grads[x.0], &dx);
                    }
                }
                Op::BatchNorm { x, gamma, beta, cache, batch_stats } => {
                    let s = &node.shape;
                    let (dx, dg, dbeta) =
                        batch_norm_backward(&g, self.value(*gamma), cache, *batch_stats, s[0], s[1], numel(&s[2..]));
                    accumulate(&mut grads[gamma.0], &dg);
                    accumulate(&mut grads[beta.0], &dbeta);
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::LayerNorm { x, gamma, beta, cache } => {
                    let width = *node.shape.last().unwrap();
                    let (dx, dg, db) = layer_norm_backward(&g, self.value(*gamma), cache, width);
                    accumulate(&mut grads[gamma.0], &dg);
                    accumulate(&mut grads[beta.0], &db);
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::Linear { x, w, b } => {
                    let ws = self.shape(*w);
                    let (out, fan_in) = (ws[0], ws[1]);
                    let rows = g.len() / out;
                    let mut dw = vec![T::zero(); out * fan_in];
                    gemm(
                        T::one(),
                        Mat::new(&g, rows, out).t(),
                        Mat::new(self.value(*x), rows, fan_in),
                        T::zero(),
                        MatMut::new(&mut dw, out, fan_in),
                    );
                    accumulate(&mut grads[w.0], &dw);
                    if let Some(b) = b {
                        let mut db = vec![T::zero(); out];
                        for r in g.chunks(out) {
                            for (a, &v) in db.iter_mut().zip(r) {
                                *a += v;
                            }
                        }
                        accumulate(&mut grads[b.0], &db);
                    }
                    if self.needs_grad(*x) {
                        let mut dx = vec![T::zero(); rows * fan_in];
                        gemm(
                            T::one(),
                            Mat::new(&g, rows, out),
                            Mat::new(self.value(*w), out, fan_in),
                            T::zero(),
                            MatMut::new(&mut dx, rows, fan_in),
                        );
                        accumulate(&mut grads[x.0], &dx);
                    }
                }
                Op::Attention { q, k, v, probs, shape } => {
                    let (dq, dk, dv) =
                        attention_backward(self.value(*q), self.value(*k), self.value(*v), probs, &g, *shape);
                    accumulate(&mut grads[q.0], &dq);
                    accumulate(&mut grads[k.0], &dk);
                    accumulate(&mut grads[v.0], &dv);
                }
                Op::Concat { a, b } => {
                    let sa = self.shape(*a);
                    let sb = self.shape(*b);
                    let spatial = numel(&sa[2..]);
                    let (ca, cb) = (sa[1], sb[1]);
                    let mut ga = Vec::with_capacity(numel(sa));
                    let mut gb = Vec::with_capacity(numel(sb));
                    for c in g.chunks((ca + cb) * spatial) {
                        ga.extend_from_slice(&c[..ca * spatial]);
                        gb.extend_from_slice(&c[ca * spatial..]);
                    }
                    accumulate(&mut grads[a.0], &ga);
                    accumulate(&mut grads[b.0], &gb);
                }
                Op::MeanSpatial(x) => {
                    let s = self.shape(*x);
                    let spatial = numel(&s[2..]);
                    let inv = T::one() / T::of(spatial as f64);
                    let gx: Vec<T> = g.iter().flat_map(|&d| std::iter::repeat_n(d * inv, spatial)).collect();
                    accumulate(&mut grads[x.0], &gx);
                }
            }
            if matches!(node.op, Op::Input | Op::Param) {
                grads[i] = Some(g);
            }
        }
        Gradients { nodes: grads, params: self.param_vars.clone() }
    }

    /// Inputs never need a gradient unless they are reachable parameters or
    /// intermediate nodes; raw data inputs are skipped to save work.
    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> (ParamStore<f64>, ParamId, ParamId) {
        let mut s = ParamStore::new();
        let w = s.add_param("w", &[3, 4], (0..12).map(|i| (i as f64 * 0.3).sin()).collect());
        let b = s.add_param("b", &[3], vec![0.1, -0.2, 0.3]);
        (s, w, b)
    }

    fn scalar_loss(g: &mut Graph<'_, f64>, w: ParamId, b: ParamId, x: &[f64]) -> (Var, f64) {
        let xv = g.input(x.to_vec(), &[2, 4]);
        let wv = g.param(w);
        let bv = g.param(b);
        let y = g.linear(xv, wv, Some(bv));
        let s = g.sigmoid(y);
        let r = g.relu(y);
        let m = g.mul(s, r);
        let total: f64 = g.value(m).iter().sum();
        (m, total)
    }

    #[test]
    fn linear_chain_gradient_matches_finite_differences() {
        let (s, w, b) = store();
        let x: Vec<f64> = (0..8).map(|i| i as f64 * 0.25 - 1.0).collect();
        let mut g = Graph::new(&s, Mode::Eval);
        let (out, _) = scalar_loss(&mut g, w, b, &x);
        let seed = vec![1.0; g.value(out).len()];
        let grads = g.backward(out, &seed);
        let gw = grads.param(w).unwrap().to_vec();
        for i in 0..12 {
            let mut sp = s.clone();
            sp.param_mut(w).data[i] += 1e-6;
            let mut sm = s.clone();
            sm.param_mut(w).data[i] -= 1e-6;
            let fp = scalar_loss(&mut Graph::new(&sp, Mode::Eval), w, b, &x).1;
            let fm = scalar_loss(&mut Graph::new(&sm, Mode::Eval), w, b, &x).1;
            assert!(((fp - fm) / 2e-6 - gw[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn param_node_is_shared_and_gradients_accumulate() {
        let (s, w, _) = store();
        let mut g = Graph::new(&s, Mode::Eval);
        let a = g.param(w);
        let b = g.param(w);
        assert_eq!(a, b);
        let y = g.add(a, b);
        let grads = g.backward(y, &vec![1.0; 12]);
        assert!(grads.param(w).unwrap().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn concat_and_mean_route_gradients() {
        let s = ParamStore::<f64>::new();
        let mut g = Graph::new(&s, Mode::Eval);
        let a = g.input(vec![1.0, 2.0, 3.0, 4.0], &[2, 1, 2]);
        let b = g.input(vec![5.0, 6.0, 7.0, 8.0], &[2, 1, 2]);
        let c = g.concat_channels(a, b);
        assert_eq!(g.value(c), &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
        let m = g.mean_spatial(c);
        assert_eq!(g.value(m), &[1.5, 5.5, 3.5, 7.5]);
        let grads = g.backward(m, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(grads.wrt(a).unwrap(), &[0.5, 0.5, 1.5, 1.5]);
        assert_eq!(grads.wrt(b).unwrap(), &[1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn eval_mode_batch_norm_uses_running_stats() {
        let mut s = ParamStore::<f64>::new();
        let gamma = s.add_param("g", &[1], vec![2.0]);
        let beta = s.add_param("b", &[1], vec![1.0]);
        let rm = s.add_buffer("rm", &[1], vec![3.0]);
        let rv = s.add_buffer("rv", &[1], vec![4.0]);
        let mut g = Graph::new(&s, Mode::Eval);
        let x = g.input(vec![3.0, 5.0], &[1, 1, 2]);
        let y = g.batch_norm(x, gamma, beta, rm, rv, 0.1, 0.0);
        assert_eq!(g.value(y), &[1.0, 3.0]);
        assert!(g.take_stat_updates().is_empty());
        let mut g = Graph::new(&s, Mode::Train);
        let x = g.input(vec![3.0, 5.0], &[1, 1, 2]);
        let y = g.batch_norm(x, gamma, beta, rm, rv, 0.1, 0.0);
        assert_eq!(g.value(y), &[-1.0, 3.0]);
        let up = g.take_stat_updates();
        assert_eq!(up[0].batch_mean, vec![4.0]);
        assert_eq!(up[0].batch_var, vec![2.0]);
    }
}
