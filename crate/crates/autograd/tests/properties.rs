use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sasvr_autograd::attention::{attention_forward, AttnShape};
use sasvr_autograd::conv::{conv_backward, conv_forward, ConvGeom};
use sasvr_autograd::{BatchNorm, Conv, ConvSpec, Graph, Init, LayerNorm, Linear, Mode, ParamId, ParamStore};

type Layers = (Conv, BatchNorm, Linear, LayerNorm);

fn noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Textbook cross-correlation with zero padding.
fn direct_conv(x: &[f64], w: &[f64], bias: &[f64], batch: usize, g: &ConvGeom) -> Vec<f64> {
    let [id, ih, iw] = g.in_dims;
    let [od, oh, ow] = g.out_dims();
    let [kd, kh, kw] = g.kernel;
    let (cg, og) = (g.in_per_group(), g.out_per_group());
    let mut y = Vec::with_capacity(batch * g.out_channels * od * oh * ow);
    for b in 0..batch {
        for o in 0..g.out_channels {
            let grp = o / og;
            for z in 0..od {
                for r in 0..oh {
                    for c in 0..ow {
                        let mut acc = bias[o];
                        for ci in 0..cg {
                            let ch = grp * cg + ci;
                            for a in 0..kd {
                                for e in 0..kh {
                                    for f in 0..kw {
                                        let zz = (z * g.stride[0] + a) as isize - g.padding[0] as isize;
                                        let rr = (r * g.stride[1] + e) as isize - g.padding[1] as isize;
                                        let cc = (c * g.stride[2] + f) as isize - g.padding[2] as isize;
                                        if zz < 0 || rr < 0 || cc < 0 || zz >= id as isize || rr >= ih as isize || cc >= iw as isize {
                                            continue;
                                        }
                                        let xi = (((b * g.in_channels + ch) * id + zz as usize) * ih + rr as usize) * iw + cc as usize;
                                        let wi = (((o * cg + ci) * kd + a) * kh + e) * kw + f;
                                        acc += x[xi] * w[wi];
                                    }
                                }
                            }
                        }
                        y.push(acc);
                    }
                }
            }
        }
    }
    y
}

fn geom_strategy() -> impl Strategy<Value = (ConvGeom, usize)> {
    (
        1usize..=2,
        1usize..=2,
        1usize..=3,
        prop::array::uniform3(1usize..=3),
        prop::array::uniform3(1usize..=2),
        prop::array::uniform3(0usize..=1),
        prop::array::uniform3(3usize..=5),
        1usize..=2,
    )
        .prop_map(|(groups, cg, og, kernel, stride, padding, in_dims, batch)| {
            let geom = ConvGeom {
                in_channels: groups * cg,
                out_channels: groups * og,
                groups,
                kernel,
                stride,
                padding,
                in_dims,
            };
            (geom, batch)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_matches_direct_sum((geom, batch) in geom_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = noise(batch * geom.in_channels * geom.in_spatial(), &mut rng);
        let w = noise(geom.weight_len(), &mut rng);
        let bias = noise(geom.out_channels, &mut rng);
        let fast = conv_forward(&x, &w, Some(&bias), batch, &geom);
        let slow = direct_conv(&x, &w, &bias, batch, &geom);
        prop_assert_eq!(fast.len(), slow.len());
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    /// The backward pass is the transpose of the (bilinear) forward map.
    #[test]
    fn conv_backward_is_adjoint((geom, batch) in geom_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nx = batch * geom.in_channels * geom.in_spatial();
        let x = noise(nx, &mut rng);
        let w = noise(geom.weight_len(), &mut rng);
        let dy = noise(batch * geom.out_channels * geom.out_spatial(), &mut rng);
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; geom.out_channels];
        let dx = conv_backward(&x, &w, &dy, batch, &geom, Some(&mut dw), Some(&mut db), true).unwrap();

        let x2 = noise(nx, &mut rng);
        let lhs = dot(&dy, &conv_forward(&x2, &w, None, batch, &geom));
        prop_assert!((lhs - dot(&dx, &x2)).abs() < 1e-9 * (1.0 + lhs.abs()));

        let w2 = noise(w.len(), &mut rng);
        let lhs = dot(&dy, &conv_forward(&x, &w2, None, batch, &geom));
        prop_assert!((lhs - dot(&dw, &w2)).abs() < 1e-9 * (1.0 + lhs.abs()));

        let l = geom.out_spatial();
        for (o, &g) in db.iter().enumerate() {
            let s: f64 = (0..batch).map(|b| dy[(b * geom.out_channels + o) * l..][..l].iter().sum::<f64>()).sum();
            prop_assert!((g - s).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_outputs_are_convex_combinations(
        batch in 1usize..=2, len in 1usize..=6, heads in 1usize..=3, hd in 1usize..=4, seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = AttnShape { batch, len, embed: heads * hd, heads };
        let n = batch * len * shape.embed;
        let (q, k, v) = (noise(n, &mut rng), noise(n, &mut rng), noise(n, &mut rng));
        let (out, probs) = attention_forward(&q, &k, &v, shape);
        for row in probs.chunks(len) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
        for b in 0..batch {
            for e in 0..shape.embed {
                let col: Vec<f64> = (0..len).map(|t| v[(b * len + t) * shape.embed + e]).collect();
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for t in 0..len {
                    let y = out[(b * len + t) * shape.embed + e];
                    prop_assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized(rows in 1usize..=5, width in 2usize..=16, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f64>::new();
        let ln = LayerNorm::new(&mut store, "ln", width);
        let mut g = Graph::new(&store, Mode::Eval);
        let input: Vec<f64> = noise(rows * width, &mut rng).iter().map(|v| 3.0 * v + 2.0).collect();
        let x = g.input(input.clone(), &[rows, width]);
        let y = ln.forward(&mut g, x);
        let stats = |row: &[f64]| {
            let m = row.iter().sum::<f64>() / width as f64;
            (m, row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / width as f64)
        };
        for (row, inp) in g.value(y).chunks(width).zip(input.chunks(width)) {
            let (m, var) = stats(row);
            let s2 = stats(inp).1;
            prop_assert!(m.abs() < 1e-10);
            prop_assert!((var - s2 / (s2 + ln.eps)).abs() < 1e-10, "var {var}");
        }
    }
}

/// conv → batch norm (batch statistics) → relu → pool → linear → layer
/// norm → sigmoid, summed against a fixed projection.
/// The input is registered as a parameter so its gradient is retained.
fn composite(store: &ParamStore<f64>, layers: &Layers, x: ParamId, proj: &[f64]) -> (f64, Vec<f64>) {
    let mut g = Graph::new(store, Mode::Train);
    let xv = g.param(x);
    let h = layers.0.forward(&mut g, xv);
    let h = layers.1.forward(&mut g, h);
    let h = g.relu(h);
    let h = g.mean_spatial(h);
    let h = layers.2.forward(&mut g, h);
    let h = layers.3.forward(&mut g, h);
    let y = g.sigmoid(h);
    let loss = dot(g.value(y), proj);
    let grads = g.backward(y, proj);
    (loss, grads.param(x).unwrap().to_vec())
}

#[test]
fn composite_input_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::<f64>::new();
    let conv = Conv::new(&mut store, "c", ConvSpec::cube(2, 4, 3, 1).with_bias(), Init::HeNormal, &mut rng);
    let bn = BatchNorm::new(&mut store, "bn", 4);
    let lin = Linear::new(&mut store, "l", 4, 3, true, Init::FanInUniform, &mut rng);
    let ln = LayerNorm::new(&mut store, "ln", 3);
    let layers = (conv, bn, lin, ln);
    let x0 = noise(2 * 2 * 3 * 4 * 4, &mut rng);
    let x = store.add_param("x", &[2, 2, 3, 4, 4], x0.clone());
    let proj = noise(2 * 3, &mut rng);
    let (_, analytic) = composite(&store, &layers, x, &proj);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut shifted = |i: usize, d: f64| {
        store.params_mut()[x.index()].data[i] = x0[i] + d;
        let l = composite(&store, &layers, x, &proj).0;
        store.params_mut()[x.index()].data[i] = x0[i];
        l
    };
    for i in 0..x0.len() {
        let fd = (shifted(i, h) - shifted(i, -h)) / (2.0 * h);
        worst = worst.max((fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-4));
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}
