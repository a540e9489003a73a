//! Batch and layer normalization kernels.

use crate::real::Real;

/// Saved forward state for a normalization backward pass.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Channel statistics of a `batch × channels × spatial` tensor.
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance, used for normalization.
    pub var: Vec<T>,
    /// Unbiased variance, used for running estimates.
    pub var_unbiased: Vec<T>,
}

#[inline]
fn f<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

// Reductions and the normalization backward run in f64 whatever `T` is:
// after global pooling the upstream gradient is nearly constant over each
// channel, and the centred terms of the backward formula cancel almost
// exactly, which single precision cannot resolve.

pub fn batch_stats<T: Real>(x: &[T], batch: usize, channels: usize, spatial: usize) -> BatchStats<T> {
    let n = batch * spatial;
    let mut mean = vec![T::zero(); channels];
    let mut var = vec![T::zero(); channels];
    let mut var_unbiased = vec![T::zero(); channels];
    let corr = if n > 1 { n as f64 / (n as f64 - 1.0) } else { 1.0 };
    for c in 0..channels {
        let rows = || (0..batch).map(move |b| (b * channels + c) * spatial);
        let m = rows().flat_map(|off| &x[off..off + spatial]).map(|&v| f(v)).sum::<f64>() / n as f64;
        let v = rows().flat_map(|off| &x[off..off + spatial]).map(|&v| (f(v) - m).powi(2)).sum::<f64>() / n as f64;
        mean[c] = T::of(m);
        var[c] = T::of(v);
        var_unbiased[c] = T::of(v * corr);
    }
    BatchStats { mean, var, var_unbiased }
}

/// Normalizes with the given per-channel mean/variance and applies the affine map.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm_forward<T: Real>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: f64,
    batch: usize,
    channels: usize,
    spatial: usize,
) -> (Vec<T>, NormCache<T>) {
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (f(v) + eps).sqrt()).collect();
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * spatial;
            let (m, g, be) = (f(mean[c]), f(gamma[c]), f(beta[c]));
            for i in off..off + spatial {
                let h = (f(x[i]) - m) * inv_std[c];
                xhat[i] = T::of(h);
                y[i] = T::of(g * h + be);
            }
        }
    }
    (y, NormCache { xhat, inv_std: inv_std.into_iter().map(T::of).collect() })
}

/// Returns `(dx, dgamma, dbeta)`. With `batch_stats` the statistics are
/// treated as functions of `x`; otherwise as constants.
pub fn batch_norm_backward<T: Real>(
    dy: &[T],
    gamma: &[T],
    cache: &NormCache<T>,
    batch_stats: bool,
    batch: usize,
    channels: usize,
    spatial: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dgamma = vec![0.0f64; channels];
    let mut dbeta = vec![0.0f64; channels];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * spatial;
            for i in off..off + spatial {
                dgamma[c] += f(dy[i]) * f(cache.xhat[i]);
                dbeta[c] += f(dy[i]);
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    let n = (batch * spatial) as f64;
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * spatial;
            let k = f(gamma[c]) * f(cache.inv_std[c]);
            let (mdy, mdx) = (dbeta[c] / n, dgamma[c] / n);
            for i in off..off + spatial {
                dx[i] = T::of(if batch_stats { k * ((f(dy[i]) - mdy) - f(cache.xhat[i]) * mdx) } else { k * f(dy[i]) });
            }
        }
    }
    (dx, dgamma.into_iter().map(T::of).collect(), dbeta.into_iter().map(T::of).collect())
}

/// Layer normalization over the trailing `width` elements of each row.
pub fn layer_norm_forward<T: Real>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    eps: f64,
    width: usize,
) -> (Vec<T>, NormCache<T>) {
    let rows = x.len() / width;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * width..(r + 1) * width];
        let m = row.iter().map(|&a| f(a)).sum::<f64>() / width as f64;
        let v = row.iter().map(|&a| (f(a) - m).powi(2)).sum::<f64>() / width as f64;
        let is = 1.0 / (v + eps).sqrt();
        inv_std[r] = T::of(is);
        for j in 0..width {
            let h = (f(row[j]) - m) * is;
            xhat[r * width + j] = T::of(h);
            y[r * width + j] = T::of(f(gamma[j]) * h + f(beta[j]));
        }
    }
    (y, NormCache { xhat, inv_std })
}

pub fn layer_norm_backward<T: Real>(
    dy: &[T],
    gamma: &[T],
    cache: &NormCache<T>,
    width: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = dy.len() / width;
    let wt = width as f64;
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![0.0f64; width];
    let mut dbeta = vec![0.0f64; width];
    let mut g = vec![0.0f64; width];
    for r in 0..rows {
        let o = r * width;
        let (mut sg, mut sgx) = (0.0, 0.0);
        for j in 0..width {
            let (d, h) = (f(dy[o + j]), f(cache.xhat[o + j]));
            dgamma[j] += d * h;
            dbeta[j] += d;
            g[j] = d * f(gamma[j]);
            sg += g[j];
            sgx += g[j] * h;
        }
        let is = f(cache.inv_std[r]);
        for j in 0..width {
            dx[o + j] = T::of(is * ((g[j] - sg / wt) - f(cache.xhat[o + j]) * sgx / wt));
        }
    }
    (dx, dgamma.into_iter().map(T::of).collect(), dbeta.into_iter().map(T::of).collect())
}
