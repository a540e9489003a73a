//! Grouped 3D convolution via im2col + GEMM. 2D convolution is the
//! special case of a unit depth kernel over a unit depth input.

use crate::real::{gemm, Mat, MatMut, Real};

/// Static description of one convolution application.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub groups: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub in_dims: [usize; 3],
}

impl ConvGeom {
    pub fn out_dims(&self) -> [usize; 3] {
        let mut o = [0; 3];
        for a in 0..3 {
            let span = self.in_dims[a] + 2 * self.padding[a];
            assert!(span >= self.kernel[a], "kernel larger than padded input on axis {a}");
            o[a] = (span - self.kernel[a]) / self.stride[a] + 1;
        }
        o
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn in_spatial(&self) -> usize {
        self.in_dims.iter().product()
    }

    pub fn out_spatial(&self) -> usize {
        self.out_dims().iter().product()
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    /// Number of weight scalars (excluding bias).
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_per_group() * self.kernel_volume()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.padding == [0, 0, 0]
    }

    pub fn validate(&self) {
        assert!(self.groups >= 1, "groups must be positive");
        assert_eq!(self.in_channels % self.groups, 0, "in_channels not divisible by groups");
        assert_eq!(self.out_channels % self.groups, 0, "out_channels not divisible by groups");
        assert!(self.stride.iter().all(|&s| s >= 1), "stride must be positive");
    }
}

/// Unfolds the `cg` channels of `x` (shape `cg × D × H × W`) into a
/// `(cg·kvol) × L` matrix.
fn im2col<T: Real>(x: &[T], cg: usize, geom: &ConvGeom, col: &mut [T]) {
    let [id, ih, iw] = geom.in_dims;
    let [od, oh, ow] = geom.out_dims();
    let [kd, kh, kw] = geom.kernel;
    let [sd, sh, sw] = geom.stride;
    let [pd, ph, pw] = geom.padding;
    let l = od * oh * ow;
    let mut row = 0;
    for c in 0..cg {
        let xc = &x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for dz in 0..kd {
            for dy in 0..kh {
                for dx in 0..kw {
                    let dst = &mut col[row * l..(row + 1) * l];
                    let mut p = 0;
                    for oz in 0..od {
                        let iz = (oz * sd + dz) as isize - pd as isize;
                        for oy in 0..oh {
                            let iy = (oy * sh + dy) as isize - ph as isize;
                            let seg = &mut dst[p..p + ow];
                            if iz < 0 || iz >= id as isize || iy < 0 || iy >= ih as isize {
                                seg.fill(T::zero());
                            } else {
                                let base = (iz as usize * ih + iy as usize) * iw;
                                for (ox, s) in seg.iter_mut().enumerate() {
                                    let ix = (ox * sw + dx) as isize - pw as isize;
                                    *s = if ix < 0 || ix >= iw as isize {
                                        T::zero()
                                    } else {
                                        xc[base + ix as usize]
                                    };
                                }
                            }
                            p += ow;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds `col` back into `dx`.
fn col2im<T: Real>(col: &[T], cg: usize, geom: &ConvGeom, dx: &mut [T]) {
    let [id, ih, iw] = geom.in_dims;
    let [od, oh, ow] = geom.out_dims();
    let [kd, kh, kw] = geom.kernel;
    let [sd, sh, sw] = geom.stride;
    let [pd, ph, pw] = geom.padding;
    let l = od * oh * ow;
    let mut row = 0;
    for c in 0..cg {
        let xc = &mut dx[c * id * ih * iw..(c + 1) * id * ih * iw];
        for dz in 0..kd {
            for dy in 0..kh {
                for dxk in 0..kw {
                    let src = &col[row * l..(row + 1) * l];
                    let mut p = 0;
                    for oz in 0..od {
                        let iz = (oz * sd + dz) as isize - pd as isize;
                        for oy in 0..oh {
                            let iy = (oy * sh + dy) as isize - ph as isize;
                            if iz >= 0 && iz < id as isize && iy >= 0 && iy < ih as isize {
                                let base = (iz as usize * ih + iy as usize) * iw;
                                for (ox, &s) in src[p..p + ow].iter().enumerate() {
                                    let ix = (ox * sw + dxk) as isize - pw as isize;
                                    if ix >= 0 && ix < iw as isize {
                                        xc[base + ix as usize] += s;
                                    }
                                }
                            }
                            p += ow;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// `x`: `batch × C × D × H × W`; `w`: `O × (C/groups) × kd × kh × kw`.
pub fn conv_forward<T: Real>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    batch: usize,
    geom: &ConvGeom,
) -> Vec<T> {
    geom.validate();
    let s_in = geom.in_spatial();
    let l = geom.out_spatial();
    let cg = geom.in_per_group();
    let og = geom.out_per_group();
    let kcols = cg * geom.kernel_volume();
    assert_eq!(x.len(), batch * geom.in_channels * s_in, "conv input length");
    assert_eq!(w.len(), geom.weight_len(), "conv weight length");
    let mut y = vec![T::zero(); batch * geom.out_channels * l];
    let pointwise = geom.is_pointwise();
    let mut col = if pointwise { Vec::new() } else { vec![T::zero(); kcols * l] };
    for b in 0..batch {
        for g in 0..geom.groups {
            let xg = &x[(b * geom.in_channels + g * cg) * s_in..(b * geom.in_channels + (g + 1) * cg) * s_in];
            let cols: &[T] = if pointwise {
                xg
            } else {
                im2col(xg, cg, geom, &mut col);
                &col
            };
            let wg = &w[g * og * kcols..(g + 1) * og * kcols];
            let y0 = (b * geom.out_channels + g * og) * l;
            gemm(
                T::one(),
                Mat::new(wg, og, kcols),
                Mat::new(cols, kcols, l),
                T::zero(),
                MatMut::new(&mut y[y0..y0 + og * l], og, l),
            );
        }
        if let Some(bias) = bias {
            for o in 0..geom.out_channels {
                let off = (b * geom.out_channels + o) * l;
                for v in &mut y[off..off + l] {
                    *v += bias[o];
                }
            }
        }
    }
    y
}

/// Gradients of a convolution. `dw` and `db` are accumulated into; `dx` is
/// returned when requested.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    batch: usize,
    geom: &ConvGeom,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
    want_dx: bool,
) -> Option<Vec<T>> {
    let s_in = geom.in_spatial();
    let l = geom.out_spatial();
    let cg = geom.in_per_group();
    let og = geom.out_per_group();
    let kcols = cg * geom.kernel_volume();
    let pointwise = geom.is_pointwise();
    let mut col = if pointwise { Vec::new() } else { vec![T::zero(); kcols * l] };
    let mut dcol = vec![T::zero(); if pointwise { 0 } else { kcols * l }];
    let mut dx = if want_dx { vec![T::zero(); x.len()] } else { Vec::new() };
    let mut dw = dw;

    if let Some(db) = db {
        for b in 0..batch {
            for o in 0..geom.out_channels {
                let off = (b * geom.out_channels + o) * l;
                db[o] += dy[off..off + l].iter().copied().sum::<T>();
            }
        }
    }

    for b in 0..batch {
        for g in 0..geom.groups {
            let x0 = (b * geom.in_channels + g * cg) * s_in;
            let xg = &x[x0..x0 + cg * s_in];
            let y0 = (b * geom.out_channels + g * og) * l;
            let dyg = &dy[y0..y0 + og * l];
            let wg = &w[g * og * kcols..(g + 1) * og * kcols];
            if let Some(dw) = dw.as_deref_mut() {
                let cols: &[T] = if pointwise {
                    xg
                } else {
                    im2col(xg, cg, geom, &mut col);
                    &col
                };
                gemm(
                    T::one(),
                    Mat::new(dyg, og, l),
                    Mat::new(cols, kcols, l).t(),
                    T::one(),
                    MatMut::new(&mut dw[g * og * kcols..(g + 1) * og * kcols], og, kcols),
                );
            }
            if want_dx {
                if pointwise {
                    gemm(
                        T::one(),
                        Mat::new(wg, og, kcols).t(),
                        Mat::new(dyg, og, l),
                        T::one(),
                        MatMut::new(&mut dx[x0..x0 + cg * s_in], kcols, l),
                    );
                } else {
                    gemm(
                        T::one(),
                        Mat::new(wg, og, kcols).t(),
                        Mat::new(dyg, og, l),
                        T::zero(),
                        MatMut::new(&mut dcol, kcols, l),
                    );
                    col2im(&dcol, cg, geom, &mut dx[x0..x0 + cg * s_in]);
                }
            }
        }
    }
    want_dx.then_some(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 7-loop convolution used as an oracle.
    fn naive(x: &[f64], w: &[f64], bias: Option<&[f64]>, batch: usize, g: &ConvGeom) -> Vec<f64> {
        let [id, ih, iw] = g.in_dims;
        let [od, oh, ow] = g.out_dims();
        let cg = g.in_per_group();
        let og = g.out_per_group();
        let kv = g.kernel_volume();
        let mut y = vec![0.0; batch * g.out_channels * od * oh * ow];
        for b in 0..batch {
            for o in 0..g.out_channels {
                let grp = o / og;
                for z in 0..od {
                    for yy in 0..oh {
                        for xx in 0..ow {
                            let mut acc = bias.map_or(0.0, |bb| bb[o]);
                            for c in 0..cg {
                                for kz in 0..g.kernel[0] {
                                    for ky in 0..g.kernel[1] {
                                        for kx in 0..g.kernel[2] {
                                            let iz = (z * g.stride[0] + kz) as isize - g.padding[0] as isize;
                                            let iy = (yy * g.stride[1] + ky) as isize - g.padding[1] as isize;
                                            let ix = (xx * g.stride[2] + kx) as isize - g.padding[2] as isize;
                                            if iz < 0 || iy < 0 || ix < 0 || iz >= id as isize || iy >= ih as isize || ix >= iw as isize {
                                                continue;
                                            }
                                            let ci = grp * cg + c;
                                            let xv = x[(((b * g.in_channels + ci) * id + iz as usize) * ih + iy as usize) * iw + ix as usize];
                                            let wv = w[((o * cg + c) * kv) + (kz * g.kernel[1] + ky) * g.kernel[2] + kx];
                                            acc += xv * wv;
                                        }
                                    }
                                }
                            }
                            y[(((b * g.out_channels + o) * od + z) * oh + yy) * ow + xx] = acc;
                        }
                    }
                }
            }
        }
        y
    }

    fn seq(n: usize, phase: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64) * 0.37 + phase).sin()).collect()
    }

    fn geoms() -> Vec<ConvGeom> {
        vec![
            ConvGeom { in_channels: 2, out_channels: 4, groups: 1, kernel: [3, 3, 3], stride: [1, 1, 1], padding: [1, 1, 1], in_dims: [4, 5, 3] },
            ConvGeom { in_channels: 4, out_channels: 4, groups: 2, kernel: [3, 3, 3], stride: [2, 2, 2], padding: [1, 1, 1], in_dims: [5, 4, 6] },
            ConvGeom { in_channels: 3, out_channels: 2, groups: 1, kernel: [1, 1, 1], stride: [1, 1, 1], padding: [0, 0, 0], in_dims: [2, 3, 3] },
            ConvGeom { in_channels: 3, out_channels: 5, groups: 1, kernel: [1, 3, 3], stride: [1, 1, 1], padding: [0, 1, 1], in_dims: [1, 4, 4] },
            ConvGeom { in_channels: 2, out_channels: 2, groups: 1, kernel: [1, 1, 1], stride: [2, 2, 2], padding: [0, 0, 0], in_dims: [3, 3, 4] },
        ]
    }

    #[test]
    fn forward_matches_direct_loops() {
        for g in geoms() {
            let batch = 2;
            let x = seq(batch * g.in_channels * g.in_spatial(), 0.1);
            let w = seq(g.weight_len(), 1.3);
            let b = seq(g.out_channels, 2.0);
            let got = conv_forward(&x, &w, Some(&b), batch, &g);
            let want = naive(&x, &w, Some(&b), batch, &g);
            for (a, e) in got.iter().zip(&want) {
                assert!((a - e).abs() < 1e-12, "{g:?}");
            }
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <dy, conv(x)> is linear in x and w; its gradients must equal the
        // backward outputs. Check via directional finite differences (exact
        // for a bilinear map up to rounding).
        for g in geoms() {
            let batch = 2;
            let x = seq(batch * g.in_channels * g.in_spatial(), 0.4);
            let w = seq(g.weight_len(), 0.9);
            let dy = seq(batch * g.out_channels * g.out_spatial(), 2.2);
            let mut dw = vec![0.0; w.len()];
            let mut db = vec![0.0; g.out_channels];
            let dx = conv_backward(&x, &w, &dy, batch, &g, Some(&mut dw), Some(&mut db), true).unwrap();
            let dot = |y: &[f64]| y.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>();
            let dirx = seq(x.len(), 3.3);
            let xp: Vec<f64> = x.iter().zip(&dirx).map(|(a, d)| a + d).collect();
            let lhs = dot(&conv_forward(&xp, &w, None, batch, &g)) - dot(&conv_forward(&x, &w, None, batch, &g));
            let rhs: f64 = dx.iter().zip(&dirx).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()), "dx {g:?}");
            let dirw = seq(w.len(), 4.4);
            let wp: Vec<f64> = w.iter().zip(&dirw).map(|(a, d)| a + d).collect();
            let lhs = dot(&conv_forward(&x, &wp, None, batch, &g)) - dot(&conv_forward(&x, &w, None, batch, &g));
            let rhs: f64 = dw.iter().zip(&dirw).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()), "dw {g:?}");
            let total: f64 = dy.iter().sum();
            assert!((db.iter().sum::<f64>() - total).abs() < 1e-9);
        }
    }

    #[test]
    fn stride_two_halves_with_ceiling() {
        let g = ConvGeom { in_channels: 1, out_channels: 1, groups: 1, kernel: [3, 3, 3], stride: [2, 2, 2], padding: [1, 1, 1], in_dims: [70, 100, 100] };
        assert_eq!(g.out_dims(), [35, 50, 50]);
        let g = ConvGeom { in_dims: [35, 25, 13], ..g };
        assert_eq!(g.out_dims(), [18, 13, 7]);
    }
}
