//! Parameterized building blocks that register their tensors in a
//! [`ParamStore`] and apply themselves to a [`Graph`].

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::graph::{Graph, Var};
use crate::params::{BufferId, ParamId, ParamStore};
use crate::real::Real;

fn uniform_init<T: Real, R: Rng + ?Sized>(n: usize, bound: f64, rng: &mut R) -> Vec<T> {
    if bound == 0.0 {
        return vec![T::zero(); n];
    }
    let d = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    (0..n).map(|_| T::of(d.sample(rng))).collect()
}

fn normal_init<T: Real, R: Rng + ?Sized>(n: usize, std: f64, rng: &mut R) -> Vec<T> {
    let d = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| T::of(d.sample(rng))).collect()
}

/// How a layer's weights start out.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in ±1/√fan_in (weights and bias).
    FanInUniform,
    /// He normal, std √(2/fan_in); bias zero.
    HeNormal,
    /// Normal with the given std; bias zero.
    Normal(f64),
    Zeros,
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let n = in_features * out_features;
        let bound = 1.0 / (in_features as f64).sqrt();
        let (w, b) = match init {
            Init::FanInUniform => (uniform_init(n, bound, rng), uniform_init(out_features, bound, rng)),
            Init::HeNormal => (normal_init(n, (2.0 / in_features as f64).sqrt(), rng), vec![T::zero(); out_features]),
            Init::Normal(s) => (normal_init(n, s, rng), vec![T::zero(); out_features]),
            Init::Zeros => (vec![T::zero(); n], vec![T::zero(); out_features]),
        };
        let weight = store.add_param(format!("{name}.weight"), &[out_features, in_features], w);
        let bias = bias.then(|| store.add_param(format!("{name}.bias"), &[out_features], b));
        Self { weight, bias, in_features, out_features }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.linear(x, w, b)
    }
}

/// 3D convolution (use a `[1, k, k]` kernel on depth-1 inputs for 2D).
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub groups: usize,
}

/// Convolution hyper-parameters.
#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Cubic kernel `k` with "same" padding for odd `k`.
    pub fn cube(in_channels: usize, out_channels: usize, k: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: [k; 3],
            stride: [stride; 3],
            padding: [k / 2; 3],
            groups: 1,
            bias: false,
        }
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_bias(mut self) -> Self {
        self.bias = true;
        self
    }

    pub fn param_count(&self) -> usize {
        let w = self.out_channels * (self.in_channels / self.groups) * self.kernel.iter().product::<usize>();
        w + if self.bias { self.out_channels } else { 0 }
    }
}

impl Conv {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: ConvSpec,
        init: Init,
        rng: &mut R,
    ) -> Self {
        assert_eq!(spec.in_channels % spec.groups, 0, "{name}: in_channels % groups");
        assert_eq!(spec.out_channels % spec.groups, 0, "{name}: out_channels % groups");
        let fan_in = (spec.in_channels / spec.groups) * spec.kernel.iter().product::<usize>();
        let shape = [
            spec.out_channels,
            spec.in_channels / spec.groups,
            spec.kernel[0],
            spec.kernel[1],
            spec.kernel[2],
        ];
        let n: usize = shape.iter().product();
        let bound = 1.0 / (fan_in as f64).sqrt();
        let (w, b) = match init {
            Init::FanInUniform => (uniform_init(n, bound, rng), uniform_init(spec.out_channels, bound, rng)),
            Init::HeNormal => (normal_init(n, (2.0 / fan_in as f64).sqrt(), rng), vec![T::zero(); spec.out_channels]),
            Init::Normal(s) => (normal_init(n, s, rng), vec![T::zero(); spec.out_channels]),
            Init::Zeros => (vec![T::zero(); n], vec![T::zero(); spec.out_channels]),
        };
        let weight = store.add_param(format!("{name}.weight"), &shape, w);
        let bias = spec.bias.then(|| store.add_param(format!("{name}.bias"), &[spec.out_channels], b));
        Self {
            weight,
            bias,
            in_channels: spec.in_channels,
            out_channels: spec.out_channels,
            kernel: spec.kernel,
            stride: spec.stride,
            padding: spec.padding,
            groups: spec.groups,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.conv3d(x, w, b, self.stride, self.padding, self.groups)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add_param(format!("{name}.weight"), &[channels], vec![T::one(); channels]),
            beta: store.add_param(format!("{name}.bias"), &[channels], vec![T::zero(); channels]),
            running_mean: store.add_buffer(format!("{name}.running_mean"), &[channels], vec![T::zero(); channels]),
            running_var: store.add_buffer(format!("{name}.running_var"), &[channels], vec![T::one(); channels]),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        g.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var, self.momentum, self.eps)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add_param(format!("{name}.weight"), &[width], vec![T::one(); width]),
            beta: store.add_param(format!("{name}.bias"), &[width], vec![T::zero(); width]),
            eps: 1e-5,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let gm = g.param(self.gamma);
        let bt = g.param(self.beta);
        g.layer_norm(x, gm, bt, self.eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_conv_parameter_count_closed_form() {
        let mut s = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = ConvSpec {
            in_channels: 2,
            out_channels: 4,
            kernel: [1, 3, 3],
            stride: [1, 1, 1],
            padding: [0, 1, 1],
            groups: 1,
            bias: true,
        };
        Conv::new(&mut s, "c", spec, Init::HeNormal, &mut rng);
        assert_eq!(s.num_scalars(), 2 * 4 * 9 + 4);
        assert_eq!(spec.param_count(), 76);
    }

    #[test]
    fn zero_init_linear_outputs_zero() {
        let mut s = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Linear::new(&mut s, "fc", 5, 6, true, Init::Zeros, &mut rng);
        let mut g = Graph::new(&s, Mode::Eval);
        let x = g.input(vec![1.5; 10], &[2, 5]);
        let y = l.forward(&mut g, x);
        assert!(g.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let build = |seed| {
            let mut s = ParamStore::<f32>::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Conv::new(&mut s, "c", ConvSpec::cube(3, 8, 3, 1), Init::HeNormal, &mut rng);
            s
        };
        assert_eq!(build(3), build(3));
        assert_ne!(build(3), build(4));
    }
}
