//! Parameterized building blocks. Each layer holds only [`ParamId`]s; values
//! live in a [`ParamStore`] passed at forward time.

use rand::Rng as _;

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Element, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn,
    Zero,
}

/// Registers parameters under a dotted name prefix.
pub struct Builder<'a, T: Element> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut Rng,
    prefix: String,
}

impl<'a, T: Element> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut Rng) -> Self {
        Builder { store, rng, prefix: String::new() }
    }

    /// Runs `f` with `scope` appended to the name prefix.
    pub fn scoped<R>(&mut self, scope: &str, f: impl FnOnce(&mut Self) -> Result<R>) -> Result<R> {
        let saved = self.prefix.clone();
        self.prefix = if saved.is_empty() { scope.to_string() } else { format!("{saved}.{scope}") };
        let out = f(self);
        self.prefix = saved;
        out
    }

    pub fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn tensor(&mut self, name: &str, shape: &[usize], fan_in: usize, init: Init) -> Result<ParamId> {
        let t = match init {
            Init::Zero => Tensor::zeros(shape),
            Init::FanIn => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let rng = &mut *self.rng;
                Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..bound)))
            }
        };
        self.store.add(self.full_name(name), t)
    }

    pub fn constant(&mut self, name: &str, t: Tensor<T>) -> Result<ParamId> {
        self.store.add(self.full_name(name), t)
    }

    /// An existing parameter, or a new one when `name` is not yet
    /// registered. Names are taken verbatim, without the prefix.
    pub fn shared(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        if let Some(id) = self.store.id(name) {
            return Ok(id);
        }
        let saved = std::mem::take(&mut self.prefix);
        let id = self.tensor(name, shape, fan_in, Init::FanIn);
        self.prefix = saved;
        id
    }
}

/// Square-kernel convolution over `[C, H, W]` features.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub bias: bool,
    pub init: Init,
}

impl ConvSpec {
    /// Same-size `k x k` convolution with bias.
    pub fn same(cin: usize, cout: usize, k: usize) -> Self {
        ConvSpec { cin, cout, k, stride: 1, pad: k / 2, groups: 1, bias: true, init: Init::FanIn }
    }

    pub fn pointwise(cin: usize, cout: usize) -> Self {
        Self::same(cin, cout, 1)
    }

    pub fn zero(mut self) -> Self {
        self.init = Init::Zero;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn num_params(&self) -> usize {
        self.cout * (self.cin / self.groups) * self.k * self.k + if self.bias { self.cout } else { 0 }
    }
}

impl Conv {
    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, s: ConvSpec) -> Result<Self> {
        b.scoped(name, |b| {
            let fan_in = (s.cin / s.groups) * s.k * s.k;
            let weight = b.tensor("weight", &[s.cout, s.cin / s.groups, s.k, s.k], fan_in, s.init)?;
            let bias = if s.bias { Some(b.tensor("bias", &[s.cout], fan_in, s.init)?) } else { None };
            Ok(Conv { weight, bias, stride: s.stride, pad: s.pad })
        })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(p, self.weight);
        let b = self.bias.map(|id| g.param(p, id));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// Transposed convolution doubling the spatial size: 3x3, stride 2,
/// padding 1, output padding 1.
#[derive(Clone, Debug)]
pub struct Upsample {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Upsample {
    pub fn num_params(cin: usize, cout: usize) -> usize {
        cin * cout * 9 + cout
    }

    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        b.scoped(name, |b| {
            let fan_in = cin * 9;
            Ok(Upsample { weight: b.tensor("weight", &[cin, cout, 3, 3], fan_in, Init::FanIn)?, bias: b.tensor("bias", &[cout], fan_in, Init::FanIn)? })
        })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(p, self.weight);
        let b = g.param(p, self.bias);
        g.conv_transpose2d(x, w, Some(b), 2, 1, 1)
    }
}

/// Affine map on row vectors `[1, in] -> [1, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn num_params(din: usize, dout: usize) -> usize {
        din * dout + dout
    }

    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, din: usize, dout: usize, init: Init) -> Result<Self> {
        b.scoped(name, |b| Ok(Linear { weight: b.tensor("weight", &[din, dout], din, init)?, bias: b.tensor("bias", &[1, dout], din, init)? }))
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(p, self.weight);
        let b = g.param(p, self.bias);
        let y = g.matmul(x, w)?;
        g.add(y, b)
    }
}

/// Per-pixel normalization across channels with a learnable affine.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn num_params(c: usize) -> usize {
        2 * c
    }

    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, c: usize) -> Result<Self> {
        b.scoped(name, |b| Ok(LayerNorm { gamma: b.constant("gamma", Tensor::ones(&[c, 1, 1]))?, beta: b.constant("beta", Tensor::zeros(&[c, 1, 1]))? }))
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let n = g.layernorm(x, 0, LN_EPS)?;
        let gamma = g.param(p, self.gamma);
        let beta = g.param(p, self.beta);
        let y = g.mul(n, gamma)?;
        g.add(y, beta)
    }
}
