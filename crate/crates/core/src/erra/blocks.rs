//! Spatial-spectral and low-rank prior branches and the block combining them.

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, ParamId, ParamStore, Tensor, Var};

use super::layers::{Builder, Conv, ConvSpec, Init, LayerNorm, Linear};

/// Floor inside the L2 norm of query and key rows.
const NORM_EPS: f64 = 1e-12;

/// Inverse of softplus.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn l2_normalize_rows<T: Element>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let sq = g.mul(x, x)?;
    let ss = g.sum_axis(sq, 1)?;
    let ss = g.add_scalar(ss, NORM_EPS);
    let n = g.sqrt(ss);
    g.div(x, n)
}

/// Transposed (channel-by-channel) self-attention plus a local 3x3 branch.
#[derive(Clone, Debug)]
pub struct Sspl {
    pub channels: usize,
    pub qkv: Conv,
    pub alpha: ParamId,
    pub proj: Conv,
    pub spatial: Conv,
}

pub struct SsplOutput {
    pub out: Var,
    /// `[C, C]`, rows sum to one.
    pub attention: Var,
}

impl Sspl {
    pub fn num_params(c: usize) -> usize {
        ConvSpec::pointwise(c, 3 * c).num_params() + 1 + ConvSpec::pointwise(c, c).num_params() + ConvSpec::same(c, c, 3).num_params()
    }

    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, c: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Sspl {
                channels: c,
                qkv: Conv::new(b, "qkv", ConvSpec::pointwise(c, 3 * c))?,
                alpha: b.constant("alpha", Tensor::scalar(T::of(softplus_inv((c as f64).sqrt()))))?,
                proj: Conv::new(b, "proj", ConvSpec::pointwise(c, c).zero())?,
                spatial: Conv::new(b, "spatial", ConvSpec::same(c, c, 3).zero())?,
            })
        })
    }

    pub fn forward_detailed<T: Element>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<SsplOutput> {
        let (c, h, w) = match g.shape(x) {
            &[c, h, w] if c == self.channels => (c, h, w),
            s => return Err(Error::shape("sspl", format!("expected [{}, H, W], got {s:?}", self.channels))),
        };
        let qkv = self.qkv.forward(g, p, x)?;
        let qkv = g.reshape(qkv, &[3 * c, h * w])?;
        let q = g.slice(qkv, 0, 0, c)?;
        let k = g.slice(qkv, 0, c, c)?;
        let v = g.slice(qkv, 0, 2 * c, c)?;
        let q = l2_normalize_rows(g, q)?;
        let k = l2_normalize_rows(g, k)?;
        // logits[i, j] = <k_i, q_j>
        let logits = g.matmul_ex(k, q, false, true)?;
        let alpha_raw = g.param(p, self.alpha);
        let alpha = g.softplus(alpha_raw);
        let logits = g.div(logits, alpha)?;
        let attention = g.softmax(logits, 1)?;
        // Feature-major V·A: out[j, :] = sum_i A[i, j] v[i, :].
        let mixed = g.matmul_ex(attention, v, true, false)?;
        let mixed = g.reshape(mixed, &[c, h, w])?;
        let spectral = self.proj.forward(g, p, mixed)?;
        let local = self.spatial.forward(g, p, x)?;
        let local = g.gelu(local);
        let out = g.add(spectral, local)?;
        Ok(SsplOutput { out, attention })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        Ok(self.forward_detailed(g, p, x)?.out)
    }
}

/// Channel rescaling from a pooled descriptor attending over a learnable
/// query prior.
#[derive(Clone, Debug)]
pub struct Lrpl {
    pub channels: usize,
    pub rank: usize,
    pub squeeze: Linear,
    pub query: ParamId,
    pub expand: Linear,
}

pub struct LrplOutput {
    pub out: Var,
    /// `[1, m]`, sums to one.
    pub weights: Var,
}

impl Lrpl {
    pub fn num_params_local(c: usize, r: usize) -> usize {
        Linear::num_params(c, c / r) + Linear::num_params(c / r, c)
    }

    /// `query` names a `[m, C/r]` prior shared by every block that uses it.
    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, c: usize, r: usize, m: usize, query: &str) -> Result<Self> {
        if r == 0 || c % r != 0 {
            return Err(Error::InvalidArgument(format!("reduction ratio {r} does not divide {c} channels")));
        }
        if m == 0 {
            return Err(Error::InvalidArgument("query prior needs at least one token".into()));
        }
        let rank = c / r;
        let q = b.shared(query, &[m, rank], rank)?;
        if b.store.value(q).shape() != [m, rank] {
            return Err(Error::shape("lrpl", format!("shared prior {query} has shape {:?}, need [{m}, {rank}]", b.store.value(q).shape())));
        }
        b.scoped(name, |b| {
            Ok(Lrpl {
                channels: c,
                rank,
                squeeze: Linear::new(b, "squeeze", c, rank, Init::FanIn)?,
                query: q,
                expand: Linear::new(b, "expand", rank, c, Init::Zero)?,
            })
        })
    }

    pub fn forward_detailed<T: Element>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<LrplOutput> {
        let c = self.channels;
        if g.shape(x).len() != 3 || g.shape(x)[0] != c {
            return Err(Error::shape("lrpl", format!("expected [{c}, H, W], got {:?}", g.shape(x))));
        }
        let pooled = g.global_avgpool(x)?;
        let pooled = g.reshape(pooled, &[1, c])?;
        let lk = self.squeeze.forward(g, p, pooled)?;
        let q = g.param(p, self.query);
        let logits = g.matmul_ex(lk, q, false, true)?;
        let logits = g.scale(logits, 1.0 / (self.rank as f64).sqrt());
        let weights = g.softmax(logits, 1)?;
        let prior = g.matmul(weights, q)?;
        let e = self.expand.forward(g, p, prior)?;
        let e = g.reshape(e, &[c, 1, 1])?;
        let out = g.mul(x, e)?;
        Ok(LrplOutput { out, weights })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        Ok(self.forward_detailed(g, p, x)?.out)
    }
}

/// Pointwise MLP with expansion factor 2.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub fc1: Conv,
    pub fc2: Conv,
}

impl FeedForward {
    pub const EXPANSION: usize = 2;

    pub fn num_params(c: usize) -> usize {
        let e = Self::EXPANSION * c;
        ConvSpec::pointwise(c, e).num_params() + ConvSpec::pointwise(e, c).num_params()
    }

    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, c: usize) -> Result<Self> {
        let e = Self::EXPANSION * c;
        b.scoped(name, |b| Ok(FeedForward { fc1: Conv::new(b, "fc1", ConvSpec::pointwise(c, e))?, fc2: Conv::new(b, "fc2", ConvSpec::pointwise(e, c).zero())? }))
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, p, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, p, h)
    }
}

/// Concatenated features mixed down to `cout` channels.
#[derive(Clone, Debug)]
pub struct Fusion {
    pub fc1: Conv,
    pub fc2: Conv,
}

impl Fusion {
    pub fn num_params(cin: usize, cout: usize) -> usize {
        ConvSpec::pointwise(cin, cout).num_params() + ConvSpec::pointwise(cout, cout).num_params()
    }

    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        b.scoped(name, |b| Ok(Fusion { fc1: Conv::new(b, "fc1", ConvSpec::pointwise(cin, cout))?, fc2: Conv::new(b, "fc2", ConvSpec::pointwise(cout, cout))? }))
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &ParamStore<T>, parts: &[Var]) -> Result<Var> {
        let x = g.concat(parts, 0)?;
        let h = self.fc1.forward(g, p, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, p, h)
    }
}

/// `x1 = x + sspl(LN(x)) [+ lrpl(LN(x))]`, `out = x1 + ffn(LN(x1))`.
#[derive(Clone, Debug)]
pub struct S2lrBlock {
    pub norm1: LayerNorm,
    pub sspl: Sspl,
    pub lrpl: Option<Lrpl>,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
}

/// Low-rank branch settings; `None` builds a spatial-spectral-only block.
pub struct LowRank<'q> {
    pub r: usize,
    pub m: usize,
    pub query: &'q str,
}

impl S2lrBlock {
    pub fn num_params(c: usize, low_rank: Option<usize>) -> usize {
        2 * LayerNorm::num_params(c) + Sspl::num_params(c) + FeedForward::num_params(c) + low_rank.map_or(0, |r| Lrpl::num_params_local(c, r))
    }

    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, c: usize, low_rank: Option<LowRank>) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(S2lrBlock {
                norm1: LayerNorm::new(b, "norm1", c)?,
                sspl: Sspl::new(b, "sspl", c)?,
                lrpl: match low_rank {
                    Some(lr) => Some(Lrpl::new(b, "lrpl", c, lr.r, lr.m, lr.query)?),
                    None => None,
                },
                norm2: LayerNorm::new(b, "norm2", c)?,
                ffn: FeedForward::new(b, "ffn", c)?,
            })
        })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let n = self.norm1.forward(g, p, x)?;
        let s = self.sspl.forward(g, p, n)?;
        let mut x1 = g.add(x, s)?;
        if let Some(l) = &self.lrpl {
            let lr = l.forward(g, p, n)?;
            x1 = g.add(x1, lr)?;
        }
        let n2 = self.norm2.forward(g, p, x1)?;
        let f = self.ffn.forward(g, p, n2)?;
        g.add(x1, f)
    }
}
