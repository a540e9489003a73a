//! Loop-level scorer oracle shared by the network tests and the acceptance suite.

use sasvr::network::ModelConfig;
use sasvr_autograd::ParamStore;

fn get(s: &ParamStore<f64>, name: &str) -> Vec<f64> {
    s.get_by_name(name).unwrap_or_else(|| panic!("{name}")).data.clone()
}

/// y[r] = W x[r] + b with W stored (out, in).
fn lin(x: &[Vec<f64>], w: &[f64], b: &[f64]) -> Vec<Vec<f64>> {
    let out = b.len();
    x.iter()
        .map(|row| (0..out).map(|o| b[o] + row.iter().enumerate().map(|(i, v)| w[o * row.len() + i] * v).sum::<f64>()).collect())
        .collect()
}

fn layer_norm(x: &[Vec<f64>], g: &[f64], b: &[f64]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let m = r.iter().sum::<f64>() / n;
            let v = r.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n;
            r.iter().enumerate().map(|(i, a)| (a - m) / (v + 1e-5).sqrt() * g[i] + b[i]).collect()
        })
        .collect()
}

/// Loop-level scorer: embedding, positions, post-norm encoder layers with
/// explicit per-head softmax attention, output projection, sigmoid.
pub fn naive_scores(s: &ParamStore<f64>, c: &ModelConfig, stack: &[f64]) -> Vec<f64> {
    let (w, e, l) = (c.volume_shape[2], c.hidden_dim, c.tokens());
    let tokens: Vec<Vec<f64>> = (0..l).map(|t| stack[t * w..(t + 1) * w].to_vec()).collect();
    let mut x = lin(&tokens, &get(s, "scorer.embed.weight"), &get(s, "scorer.embed.bias"));
    let pos = get(s, "scorer.pos.weight");
    for (t, row) in x.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            *v += pos[t * e + i];
        }
    }
    let dh = e / c.heads;
    for layer in 0..c.layers {
        let p = |n: &str| format!("scorer.layers.{layer}.{n}");
        let q = lin(&x, &get(s, &p("q.weight")), &get(s, &p("q.bias")));
        let k = lin(&x, &get(s, &p("k.weight")), &get(s, &p("k.bias")));
        let v = lin(&x, &get(s, &p("v.weight")), &get(s, &p("v.bias")));
        let mut att = vec![vec![0.0; e]; l];
        for h in 0..c.heads {
            for i in 0..l {
                let logits: Vec<f64> = (0..l)
                    .map(|j| (0..dh).map(|d| q[i][h * dh + d] * k[j][h * dh + d]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|a| (a - m).exp()).sum();
                for j in 0..l {
                    let pj = (logits[j] - m).exp() / z;
                    for d in 0..dh {
                        att[i][h * dh + d] += pj * v[j][h * dh + d];
                    }
                }
            }
        }
        let o = lin(&att, &get(s, &p("o.weight")), &get(s, &p("o.bias")));
        let r: Vec<Vec<f64>> = x.iter().zip(&o).map(|(a, b)| a.iter().zip(b).map(|(u, v)| u + v).collect()).collect();
        let h1 = layer_norm(&r, &get(s, &p("ln1.weight")), &get(s, &p("ln1.bias")));
        let f = lin(&h1, &get(s, &p("ff1.weight")), &get(s, &p("ff1.bias")));
        let f: Vec<Vec<f64>> = f.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect();
        let f = lin(&f, &get(s, &p("ff2.weight")), &get(s, &p("ff2.bias")));
        let r: Vec<Vec<f64>> = h1.iter().zip(&f).map(|(a, b)| a.iter().zip(b).map(|(u, v)| u + v).collect()).collect();
        x = layer_norm(&r, &get(s, &p("ln2.weight")), &get(s, &p("ln2.bias")));
    }
    lin(&x, &get(s, "scorer.out.weight"), &get(s, "scorer.out.bias"))
        .into_iter()
        .flatten()
        .map(|v| 1.0 / (1.0 + (-v).exp()))
        .collect()
}
