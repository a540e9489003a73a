//! Multi-head scaled dot-product attention over already projected
//! queries, keys and values of shape `batch × len × embed`.

use crate::real::{gemm, Mat, MatMut, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnShape {
    pub batch: usize,
    pub len: usize,
    pub embed: usize,
    pub heads: usize,
}

impl AttnShape {
    pub fn head_dim(&self) -> usize {
        self.embed / self.heads
    }

    fn head_view<'a, T>(&self, x: &'a [T], b: usize, h: usize) -> Mat<'a, T> {
        let off = b * self.len * self.embed + h * self.head_dim();
        Mat { data: &x[off..], rows: self.len, cols: self.head_dim(), row_stride: self.embed, col_stride: 1 }
    }

    fn head_view_mut<'a, T>(&self, x: &'a mut [T], b: usize, h: usize) -> MatMut<'a, T> {
        let off = b * self.len * self.embed + h * self.head_dim();
        MatMut { data: &mut x[off..], rows: self.len, cols: self.head_dim(), row_stride: self.embed, col_stride: 1 }
    }
}

fn softmax_rows<T: Real>(s: &mut [T], len: usize) {
    for row in s.chunks_mut(len) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v = *v / z;
        }
    }
}

/// Returns the concatenated head outputs and the attention probabilities
/// (`batch × heads × len × len`).
pub fn attention_forward<T: Real>(q: &[T], k: &[T], v: &[T], shape: AttnShape) -> (Vec<T>, Vec<T>) {
    assert_eq!(shape.embed % shape.heads, 0, "embed not divisible by heads");
    let n = shape.batch * shape.len * shape.embed;
    assert!(q.len() == n && k.len() == n && v.len() == n, "attention input length");
    let l = shape.len;
    let scale = T::one() / T::of(shape.head_dim() as f64).sqrt();
    let mut out = vec![T::zero(); n];
    let mut probs = vec![T::zero(); shape.batch * shape.heads * l * l];
    for b in 0..shape.batch {
        for h in 0..shape.heads {
            let p0 = (b * shape.heads + h) * l * l;
            let p = &mut probs[p0..p0 + l * l];
            gemm(scale, shape.head_view(q, b, h), shape.head_view(k, b, h).t(), T::zero(), MatMut::new(p, l, l));
            softmax_rows(p, l);
            gemm(T::one(), Mat::new(p, l, l), shape.head_view(v, b, h), T::zero(), shape.head_view_mut(&mut out, b, h));
        }
    }
    (out, probs)
}

/// Returns `(dq, dk, dv)`.
pub fn attention_backward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    shape: AttnShape,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = q.len();
    let l = shape.len;
    let scale = T::one() / T::of(shape.head_dim() as f64).sqrt();
    let mut dq = vec![T::zero(); n];
    let mut dk = vec![T::zero(); n];
    let mut dv = vec![T::zero(); n];
    let mut ds = vec![T::zero(); l * l];
    for b in 0..shape.batch {
        for h in 0..shape.heads {
            let p0 = (b * shape.heads + h) * l * l;
            let p = &probs[p0..p0 + l * l];
            let d_o = shape.head_view(dout, b, h);
            // dV = Pᵀ dO
            gemm(T::one(), Mat::new(p, l, l).t(), d_o, T::zero(), shape.head_view_mut(&mut dv, b, h));
            // dP = dO Vᵀ
            gemm(T::one(), d_o, shape.head_view(v, b, h).t(), T::zero(), MatMut::new(&mut ds, l, l));
            // dS = P ∘ (dP − rowsum(dP ∘ P))
            for r in 0..l {
                let row = &mut ds[r * l..(r + 1) * l];
                let prow = &p[r * l..(r + 1) * l];
                let dot: T = row.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                for (d, &pp) in row.iter_mut().zip(prow) {
                    *d = pp * (*d - dot);
                }
            }
            gemm(scale, Mat::new(&ds, l, l), shape.head_view(k, b, h), T::zero(), shape.head_view_mut(&mut dq, b, h));
            gemm(scale, Mat::new(&ds, l, l).t(), shape.head_view(q, b, h), T::zero(), shape.head_view_mut(&mut dk, b, h));
        }
    }
    (dq, dk, dv)
}
