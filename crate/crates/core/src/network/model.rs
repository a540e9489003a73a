use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sasvr_autograd::{BatchNorm, Conv, ConvSpec, Graph, Init, LayerNorm, Linear, Mode, ParamId, ParamStore, Real, Var};

use super::config::ModelConfig;
use crate::acquisition::SamplePair;
use crate::error::{Result, SvrError};
use crate::geometry::RigidParams;

/// How slice scores enter the slice branch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScoreMode {
    /// Scores come from the attention scorer.
    Learned,
    /// Every pixel gets the same score; the scorer is bypassed.
    Constant(f32),
}

struct EncoderLayer {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    ln2: LayerNorm,
}

/// Row-token transformer producing one score per stack pixel.
pub struct Scorer {
    pub embed: Linear,
    pub pos: ParamId,
    layers: Vec<EncoderLayer>,
    pub out: Linear,
    heads: usize,
    tokens: usize,
    width: usize,
    hidden: usize,
}

impl Scorer {
    fn new<T: Real>(store: &mut ParamStore<T>, c: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let (e, w) = (c.hidden_dim, c.volume_shape[2]);
        let embed = Linear::new(store, "scorer.embed", w, e, true, Init::FanInUniform, rng);
        let pos_init = Linear::new(store, "scorer.pos", e, c.tokens(), false, Init::Normal(0.02), rng);
        let layers = (0..c.layers)
            .map(|l| {
                let n = |s: &str| format!("scorer.layers.{l}.{s}");
                EncoderLayer {
                    q: Linear::new(store, &n("q"), e, e, true, Init::FanInUniform, rng),
                    k: Linear::new(store, &n("k"), e, e, true, Init::FanInUniform, rng),
                    v: Linear::new(store, &n("v"), e, e, true, Init::FanInUniform, rng),
                    o: Linear::new(store, &n("o"), e, e, true, Init::FanInUniform, rng),
                    ln1: LayerNorm::new(store, &n("ln1"), e),
                    ff1: Linear::new(store, &n("ff1"), e, c.ffn_dim, true, Init::FanInUniform, rng),
                    ff2: Linear::new(store, &n("ff2"), c.ffn_dim, e, true, Init::FanInUniform, rng),
                    ln2: LayerNorm::new(store, &n("ln2"), e),
                }
            })
            .collect();
        let out = Linear::new(store, "scorer.out", e, w, true, Init::FanInUniform, rng);
        Self { embed, pos: pos_init.weight, layers, out, heads: c.heads, tokens: c.tokens(), width: w, hidden: e }
    }

    /// `stacks` `(B, K, H, W)` → scores in `(0, 1)` of the same shape.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, stacks: Var) -> Var {
        let shape = g.shape(stacks).to_vec();
        let b = shape[0];
        let x = g.reshape(stacks, &[b, self.tokens, self.width]);
        let x = self.embed.forward(g, x);
        let flat = g.reshape(x, &[b, self.tokens * self.hidden]);
        let pos = g.param(self.pos);
        let flat = g.add_row(flat, pos);
        let mut x = g.reshape(flat, &[b, self.tokens, self.hidden]);
        for l in &self.layers {
            let q = l.q.forward(g, x);
            let k = l.k.forward(g, x);
            let v = l.v.forward(g, x);
            let a = g.attention(q, k, v, self.heads);
            let a = l.o.forward(g, a);
            let r = g.add(x, a);
            let h = l.ln1.forward(g, r);
            let f = l.ff1.forward(g, h);
            let f = g.relu(f);
            let f = l.ff2.forward(g, f);
            let r = g.add(h, f);
            x = l.ln2.forward(g, r);
        }
        let y = self.out.forward(g, x);
        let y = g.sigmoid(y);
        g.reshape(y, &shape)
    }
}

struct BasicBlock {
    c1: Conv,
    bn1: BatchNorm,
    c2: Conv,
    bn2: BatchNorm,
    proj: Conv,
    proj_bn: BatchNorm,
}

impl BasicBlock {
    fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut proj = ConvSpec::cube(cin, cout, 1, 2);
        proj.padding = [0; 3];
        Self {
            c1: Conv::new(store, &format!("{name}.conv1"), ConvSpec::cube(cin, cout, 3, 2), Init::HeNormal, rng),
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), cout),
            c2: Conv::new(store, &format!("{name}.conv2"), ConvSpec::cube(cout, cout, 3, 1), Init::HeNormal, rng),
            bn2: BatchNorm::new(store, &format!("{name}.bn2"), cout),
            proj: Conv::new(store, &format!("{name}.proj"), proj, Init::HeNormal, rng),
            proj_bn: BatchNorm::new(store, &format!("{name}.proj_bn"), cout),
        }
    }

    fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let y = self.c1.forward(g, x);
        let y = self.bn1.forward(g, y);
        let y = g.relu(y);
        let y = self.c2.forward(g, y);
        let y = self.bn2.forward(g, y);
        let s = self.proj.forward(g, x);
        let s = self.proj_bn.forward(g, s);
        let y = g.add(y, s);
        g.relu(y)
    }
}

/// 3D ResNet-10: stem plus four stride-2 basic blocks.
pub struct ResNet10 {
    stem: Conv,
    stem_bn: BatchNorm,
    blocks: Vec<BasicBlock>,
}

impl ResNet10 {
    fn new<T: Real>(store: &mut ParamStore<T>, name: &str, widths: [usize; 4], rng: &mut ChaCha8Rng) -> Self {
        let stem = Conv::new(store, &format!("{name}.stem"), ConvSpec::cube(1, widths[0], 3, 1), Init::HeNormal, rng);
        let stem_bn = BatchNorm::new(store, &format!("{name}.stem_bn"), widths[0]);
        let mut cin = widths[0];
        let blocks = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let b = BasicBlock::new(store, &format!("{name}.layer{}", i + 1), cin, w, rng);
                cin = w;
                b
            })
            .collect();
        Self { stem, stem_bn, blocks }
    }

    /// `(B, 1, D, H, W)` → `(B, C4, D/16, H/16, W/16)` (rounded up).
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let y = self.stem.forward(g, x);
        let y = self.stem_bn.forward(g, y);
        let mut y = g.relu(y);
        for b in &self.blocks {
            y = b.forward(g, y);
        }
        y
    }
}

struct ResNeXtBlock {
    c1: Conv,
    bn1: BatchNorm,
    c2: Conv,
    bn2: BatchNorm,
    c3: Conv,
    bn3: BatchNorm,
}

impl ResNeXtBlock {
    fn new<T: Real>(store: &mut ParamStore<T>, name: &str, c: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let (ch, w) = (c.fused_channels(), c.regressor_width);
        let mut c1 = ConvSpec::cube(ch, w, 1, 1);
        c1.padding = [0; 3];
        let mut c3 = ConvSpec::cube(w, ch, 1, 1);
        c3.padding = [0; 3];
        Self {
            c1: Conv::new(store, &format!("{name}.conv1"), c1, Init::HeNormal, rng),
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), w),
            c2: Conv::new(store, &format!("{name}.conv2"), ConvSpec::cube(w, w, 3, 1).groups(c.cardinality), Init::HeNormal, rng),
            bn2: BatchNorm::new(store, &format!("{name}.bn2"), w),
            c3: Conv::new(store, &format!("{name}.conv3"), c3, Init::HeNormal, rng),
            bn3: BatchNorm::new(store, &format!("{name}.bn3"), ch),
        }
    }

    fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let y = self.c1.forward(g, x);
        let y = self.bn1.forward(g, y);
        let y = g.relu(y);
        let y = self.c2.forward(g, y);
        let y = self.bn2.forward(g, y);
        let y = g.relu(y);
        let y = self.c3.forward(g, y);
        let y = self.bn3.forward(g, y);
        let y = g.add(x, y);
        g.relu(y)
    }
}

/// Graph handles produced by [`Network::forward`].
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// `(B, 6)` rigid parameters (degrees, millimetres).
    pub params: Var,
    /// `(B, K, H, W)` scores when the scorer ran.
    pub scores: Option<Var>,
}

/// Layer handles into a [`ParamStore`].
pub struct Network {
    pub config: ModelConfig,
    pub scorer: Option<Scorer>,
    slice_conv: Conv,
    slice_encoder: ResNet10,
    volume_encoder: ResNet10,
    regressor: Vec<ResNeXtBlock>,
    pub head: Linear,
}

impl Network {
    /// Registers every tensor in `store`. The final layer starts at zero so
    /// an untrained network predicts the identity.
    pub fn build<T: Real>(config: &ModelConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scorer = c.with_attention.then(|| Scorer::new(store, c, &mut rng));
        let ks = c.slice_kernel;
        let slice_spec = sasvr_autograd::ConvSpec {
            in_channels: c.k,
            out_channels: c.depth(),
            kernel: [1, ks, ks],
            stride: [1; 3],
            padding: [0, ks / 2, ks / 2],
            groups: 1,
            bias: true,
        };
        let slice_conv = Conv::new(store, "slice_conv", slice_spec, Init::FanInUniform, &mut rng);
        let slice_encoder = ResNet10::new(store, "slice_encoder", c.encoder_widths, &mut rng);
        let volume_encoder = ResNet10::new(store, "volume_encoder", c.encoder_widths, &mut rng);
        let regressor =
            (0..c.regressor_blocks).map(|i| ResNeXtBlock::new(store, &format!("regressor.{i}"), c, &mut rng)).collect();
        let head = Linear::new(store, "head", c.fused_channels(), 6, true, Init::Zeros, &mut rng);
        Ok(Self { config: c.clone(), scorer, slice_conv, slice_encoder, volume_encoder, regressor, head })
    }

    /// Scorer output for `(B, K, H, W)` stacks. Panics without a scorer.
    pub fn scores<T: Real>(&self, g: &mut Graph<'_, T>, stacks: Var) -> Var {
        self.scorer.as_ref().expect("network was built without attention").forward(g, stacks)
    }

    /// Weighted stacks `(B, K, H, W)` → `(B, C4, ..)` features.
    pub fn encode_slices<T: Real>(&self, g: &mut Graph<'_, T>, weighted: Var) -> Var {
        let s = g.shape(weighted).to_vec();
        let x = g.reshape(weighted, &[s[0], s[1], 1, s[2], s[3]]);
        let x = self.slice_conv.forward(g, x);
        let x = g.reshape(x, &[s[0], 1, self.config.depth(), s[2], s[3]]);
        self.slice_encoder.forward(g, x)
    }

    /// `(B, 1, D, H, W)` → `(B, C4, ..)` features.
    pub fn encode_volume<T: Real>(&self, g: &mut Graph<'_, T>, volumes: Var) -> Var {
        self.volume_encoder.forward(g, volumes)
    }

    /// Fused features `(B, 2·C4, ..)` → `(B, 6)`.
    pub fn regress<T: Real>(&self, g: &mut Graph<'_, T>, fused: Var) -> Var {
        let mut x = fused;
        for b in &self.regressor {
            x = b.forward(g, x);
        }
        let x = g.mean_spatial(x);
        self.head.forward(g, x)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, stacks: Var, volumes: Var, mode: ScoreMode) -> Forward {
        let (weighted, scores) = match (&self.scorer, mode) {
            (None, _) => (stacks, None),
            (Some(sc), ScoreMode::Learned) => {
                let s = sc.forward(g, stacks);
                (g.mul(stacks, s), Some(s))
            }
            (Some(_), ScoreMode::Constant(c)) => {
                let shape = g.shape(stacks).to_vec();
                let n = g.value(stacks).len();
                let s = g.input(vec![T::of(c as f64); n], &shape);
                (g.mul(stacks, s), None)
            }
        };
        let fs = self.encode_slices(g, weighted);
        let fv = self.encode_volume(g, volumes);
        let fused = g.concat_channels(fs, fv);
        Forward { params: self.regress(g, fused), scores }
    }
}

/// Network inputs for a batch of pairs.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub size: usize,
    /// `(B, K, H, W)`.
    pub stacks: Vec<T>,
    /// `(B, 1, D, H, W)`.
    pub volumes: Vec<T>,
    /// Ground-truth parameters per pair.
    pub targets: Vec<RigidParams>,
}

impl<T: Real> Batch<T> {
    pub fn from_pairs(pairs: &[&SamplePair], config: &ModelConfig) -> Result<Self> {
        if pairs.is_empty() {
            return Err(SvrError::invalid("empty batch"));
        }
        let [k, h, w] = config.stack_shape();
        let mut stacks = Vec::with_capacity(pairs.len() * k * h * w);
        let mut volumes = Vec::with_capacity(pairs.len() * config.volume_shape.iter().product::<usize>());
        for p in pairs {
            if p.stack.data.dim() != (k, h, w) || p.reference.shape() != config.volume_shape {
                return Err(SvrError::ShapeMismatch(format!(
                    "pair {}: stack {:?} / volume {:?} do not match the model ({k}, {h}, {w}) / {:?}",
                    p.pair_id,
                    p.stack.data.dim(),
                    p.reference.shape(),
                    config.volume_shape
                )));
            }
            stacks.extend(p.stack.as_slice().iter().map(|&v| T::of(v as f64)));
            volumes.extend(p.reference.as_slice().iter().map(|&v| T::of(v as f64)));
        }
        Ok(Self { size: pairs.len(), stacks, volumes, targets: pairs.iter().map(|p| p.params).collect() })
    }

    pub fn inputs(&self, g: &mut Graph<'_, T>, config: &ModelConfig) -> (Var, Var) {
        let [k, h, w] = config.stack_shape();
        let [d, _, _] = config.volume_shape;
        let s = g.input(self.stacks.clone(), &[self.size, k, h, w]);
        let v = g.input(self.volumes.clone(), &[self.size, 1, d, h, w]);
        (s, v)
    }
}

/// A network together with its parameters.
pub struct Model<T: Real = f32> {
    pub net: Network,
    pub store: ParamStore<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = Network::build(config, &mut store, seed)?;
        Ok(Self { net, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    /// Same network with every tensor converted to `U`.
    pub fn cast<U: Real>(&self) -> Model<U> {
        let mut store = ParamStore::<U>::new();
        let net = Network::build(&self.net.config, &mut store, 0).expect("config already validated");
        store.copy_matching_from(&self.store.cast::<U>());
        Model { net, store }
    }

    /// Inference-mode predictions.
    pub fn predict_batch(&self, batch: &Batch<T>, mode: ScoreMode) -> Vec<RigidParams> {
        let mut g = Graph::new(&self.store, Mode::Eval);
        let (s, v) = batch.inputs(&mut g, &self.net.config);
        let out = self.net.forward(&mut g, s, v, mode);
        g.value(out.params)
            .chunks(6)
            .map(|c| RigidParams::from_array(std::array::from_fn(|i| c[i].to_f64().unwrap_or(f64::NAN))))
            .collect()
    }

    pub fn predict(&self, pairs: &[&SamplePair]) -> Result<Vec<RigidParams>> {
        let batch = Batch::from_pairs(pairs, &self.net.config)?;
        Ok(self.predict_batch(&batch, ScoreMode::Learned))
    }

    /// Score map `(K, H, W)` of one pair.
    pub fn attention_scores(&self, pair: &SamplePair) -> Result<Array3<f32>> {
        if self.net.scorer.is_none() {
            return Err(SvrError::invalid("model was built without attention"));
        }
        let batch = Batch::<T>::from_pairs(&[pair], &self.net.config)?;
        let mut g = Graph::new(&self.store, Mode::Eval);
        let [k, h, w] = self.net.config.stack_shape();
        let s = g.input(batch.stacks, &[1, k, h, w]);
        let sc = self.net.scores(&mut g, s);
        let data = g.value(sc).iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect();
        Ok(Array3::from_shape_vec((k, h, w), data).expect("scorer keeps the stack shape"))
    }
}

/// Trainable scalar count (running statistics excluded).
pub fn count_parameters(config: &ModelConfig) -> Result<usize> {
    Ok(Model::<f32>::new(config, 0)?.store.num_scalars())
}
