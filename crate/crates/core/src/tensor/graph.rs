use std::collections::HashMap;

use super::kernels::{self, ConvGeom};
use super::param::{ParamId, ParamStore};
use super::{numel, Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Binary { kind: Binary, a: Var, b: Var },
    Scale { x: Var, c: T },
    Offset { x: Var },
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Reshape { x: Var },
    Transpose { x: Var },
    Conv { x: Var, w: Var, bias: Option<Var>, geom: ConvGeom },
    ConvTranspose { x: Var, w: Var, bias: Option<Var>, geom: ConvGeom },
    MaxPool { x: Var, arg: Vec<usize> },
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, axis: usize, inv_std: Vec<T> },
    Gelu { x: Var },
    Softplus { x: Var },
    Sqrt { x: Var },
    Exp { x: Var },
    Sum { x: Var },
    SumAxis { x: Var, axis: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recording of tensor operations that can be differentiated in reverse.
///
/// Graphs are cheap and single-use: build one per forward pass, call
/// [`Graph::backward`] once, then read gradients or fold them into a
/// [`ParamStore`].
pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    tie_params: bool,
    bound: HashMap<ParamId, Var>,
    occurrences: Vec<(ParamId, Var)>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

fn gelu<T: Element>(x: T) -> T {
    let x = x.as_f64();
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    T::of(0.5 * x * (1.0 + u.tanh()))
}

fn gelu_grad<T: Element>(x: T) -> T {
    let x = x.as_f64();
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
    T::of(0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
}

pub(crate) fn softplus<T: Element>(x: T) -> T {
    let zero = T::zero();
    x.max(zero) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<T: Element>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), tie_params: true, bound: HashMap::new(), occurrences: Vec::new() }
    }

    /// A graph where every [`Graph::param`] call creates a fresh leaf, so the
    /// contribution of each use of a parameter can be read separately.
    pub fn untied() -> Self {
        Graph { tie_params: false, ..Self::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant: no gradient flows into it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A free leaf whose gradient is recorded.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if self.tie_params {
            if let Some(&v) = self.bound.get(&id) {
                return v;
            }
        }
        let v = self.variable(store.value(id).clone());
        self.bound.insert(id, v);
        self.occurrences.push((id, v));
        v
    }

    /// Every `(parameter, leaf)` binding made on this graph, in binding order.
    pub fn param_occurrences(&self) -> &[(ParamId, Var)] {
        &self.occurrences
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds the gradients of every bound parameter into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<T>) {
        for &(id, v) in &self.occurrences {
            if let Some(g) = self.grad(v) {
                store.accumulate_grad(id, g);
            }
        }
    }

    // ---------------------------------------------------------------- elementwise

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = kernels::broadcast_shape(&sa, &sb)
            .ok_or_else(|| Error::shape("elementwise", format!("{sa:?} vs {sb:?}")))?;
        let f = |x: T, y: T| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let data: Vec<T> = if sa == sb {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ma = kernels::broadcast_map(&out_shape, &sa);
            let mb = kernels::broadcast_map(&out_shape, &sb);
            ma.iter().zip(&mb).map(|(&i, &j)| f(va[i], vb[j])).collect()
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape: out_shape, data }, Op::Binary { kind, a, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::of(c);
        let value = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(value, Op::Scale { x, c }, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = T::of(c);
        let value = self.value(x).map(|v| v + c);
        let rg = self.rg(x);
        self.push(value, Op::Offset { x }, rg)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    /// Tanh-form GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu, Op::Gelu { x })
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus { x })
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.sqrt(), Op::Sqrt { x })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp { x })
    }

    // ---------------------------------------------------------------- shape

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("transpose", format!("expected rank 2, got {s:?}")));
        }
        let (m, n) = (s[0], s[1]);
        let src = self.value(x).data();
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape: vec![n, m], data }, Op::Transpose { x }, rg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(xs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} for rank {}", first.len())));
        }
        let mut len = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i]) {
                return Err(Error::shape("concat", format!("{first:?} vs {s:?} along axis {axis}")));
            }
            len += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = len;
        let (outer, _, inner) = kernels::axis_split(&first, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in xs {
                let n = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * n..(o + 1) * n]);
            }
        }
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor { shape, data }, Op::Concat { xs: xs.to_vec(), axis }, rg))
    }

    /// `len` entries of `x` along `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::shape("slice", format!("[{start}, {}) of axis {axis} in {s:?}", start + len)));
        }
        let (outer, n, inner) = kernels::axis_split(&s, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape, data }, Op::Slice { x, axis, start }, rg))
    }

    // ---------------------------------------------------------------- reductions

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum along `axis`, keeping it with length 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::shape("sum_axis", format!("axis {axis} for {s:?}")));
        }
        let (outer, n, inner) = kernels::axis_split(&s, axis);
        let src = self.value(x).data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let row = &src[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (d, &v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        let mut shape = s;
        shape[axis] = 1;
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape, data }, Op::SumAxis { x, axis }, rg))
    }

    /// Mean over the spatial axes of a `[C, H, W]` feature: `[C, 1, 1]`.
    pub fn global_avgpool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::shape("global_avgpool", format!("expected [C, H, W], got {s:?}")));
        }
        let flat = self.reshape(x, &[s[0], s[1] * s[2]])?;
        let summed = self.sum_axis(flat, 1)?;
        let mean = self.scale(summed, 1.0 / (s[1] * s[2]) as f64);
        self.reshape(mean, &[s[0], 1, 1])
    }

    // ---------------------------------------------------------------- normalization

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::shape("softmax", format!("axis {axis} for {s:?}")));
        }
        let (outer, n, inner) = kernels::axis_split(&s, axis);
        let src = self.value(x).data();
        let mut data = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let m = (0..n).map(|k| src[at(k)]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for k in 0..n {
                    let e = (src[at(k)] - m).exp();
                    data[at(k)] = e;
                    z += e;
                }
                for k in 0..n {
                    data[at(k)] /= z;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape: s, data }, Op::Softmax { x, axis }, rg))
    }

    /// Zero-mean, unit-variance normalization along `axis` (no affine part).
    pub fn layernorm(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::shape("layernorm", format!("axis {axis} for {s:?}")));
        }
        let (outer, n, inner) = kernels::axis_split(&s, axis);
        let src = self.value(x).data();
        let mut data = vec![T::zero(); src.len()];
        let mut inv_std = vec![T::zero(); outer * inner];
        let nt = T::of(n as f64);
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let mean = (0..n).map(|k| src[at(k)]).sum::<T>() / nt;
                let var = (0..n).map(|k| (src[at(k)] - mean).powi(2)).sum::<T>() / nt;
                let is = T::one() / (var + T::of(eps)).sqrt();
                inv_std[o * inner + i] = is;
                for k in 0..n {
                    data[at(k)] = (src[at(k)] - mean) * is;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape: s, data }, Op::LayerNorm { x, axis, inv_std }, rg))
    }

    // ---------------------------------------------------------------- linear algebra

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false, false)
    }

    /// `op(a) · op(b)` where `op` optionally transposes a rank-2 operand.
    pub fn matmul_ex(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape("matmul", format!("expected rank-2 operands, got {sa:?} and {sb:?}")));
        }
        let inner_a = if ta { sa[0] } else { sa[1] };
        let inner_b = if tb { sb[1] } else { sb[0] };
        if inner_a != inner_b {
            return Err(Error::shape("matmul", format!("inner dimensions {inner_a} vs {inner_b}")));
        }
        let (data, shape) =
            kernels::matmul(self.value(a).data(), [sa[0], sa[1]], ta, self.value(b).data(), [sb[0], sb[1]], tb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape: shape.to_vec(), data }, Op::MatMul { a, b, ta, tb }, rg))
    }

    // ---------------------------------------------------------------- convolution

    fn chw(&self, x: Var, op: &'static str) -> Result<[usize; 3]> {
        match *self.shape(x) {
            [c, h, w] => Ok([c, h, w]),
            ref s => Err(Error::shape(op, format!("expected [C, H, W], got {s:?}"))),
        }
    }

    fn check_bias(&self, bias: Option<Var>, channels: usize, op: &'static str) -> Result<()> {
        if let Some(b) = bias {
            if self.shape(b) != [channels] {
                return Err(Error::shape(op, format!("bias {:?} for {channels} channels", self.shape(b))));
            }
        }
        Ok(())
    }

    fn add_bias(&self, data: &mut [T], bias: Option<Var>, channels: usize) {
        if let Some(b) = bias {
            let plane = data.len() / channels;
            for (c, chunk) in data.chunks_mut(plane).enumerate() {
                let bv = self.value(b).data()[c];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }

    /// Cross-correlation of `x: [Ci, H, W]` with `w: [Co, Ci / groups, k, k]`.
    /// The group count is inferred from the weight shape, so a `[C, 1, k, k]`
    /// weight gives a depthwise convolution.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let [ci, h, wd] = self.chw(x, "conv2d")?;
        let ws = self.shape(w).to_vec();
        let (co, cig, k) = match ws[..] {
            [co, cig, k, k2] if k == k2 && cig > 0 => (co, cig, k),
            _ => return Err(Error::shape("conv2d", format!("weight {ws:?} must be [Co, Ci/g, k, k]"))),
        };
        if ci % cig != 0 {
            return Err(Error::shape("conv2d", format!("weight {ws:?} does not fit {ci} input channels")));
        }
        let geom = ConvGeom::conv(ci, h, wd, co, k, stride, pad, ci / cig)?;
        self.check_bias(bias, co, "conv2d")?;
        let mut data = vec![T::zero(); co * geom.ho * geom.wo];
        kernels::conv_gather(&geom, self.value(x).data(), self.value(w).data(), &mut data);
        self.add_bias(&mut data, bias, co);
        let rg = self.rg(x) || self.rg(w) || bias.is_some_and(|b| self.rg(b));
        let shape = vec![co, geom.ho, geom.wo];
        Ok(self.push(Tensor { shape, data }, Op::Conv { x, w, bias, geom }, rg))
    }

    /// Per-channel convolution; `w: [C, 1, k, k]`.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let c = self.chw(x, "depthwise_conv2d")?[0];
        let ws = self.shape(w);
        if ws.len() != 4 || ws[0] != c || ws[1] != 1 {
            return Err(Error::shape("depthwise_conv2d", format!("weight {ws:?} for {c} channels")));
        }
        self.conv2d(x, w, bias, stride, pad)
    }

    /// Transposed convolution of `x: [Ci, H, W]` with `w: [Ci, Co, k, k]`;
    /// output side `(H - 1) stride - 2 pad + k + output_pad`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<Var> {
        let [ci, h, wd] = self.chw(x, "conv_transpose2d")?;
        let ws = self.shape(w).to_vec();
        let (co, k) = match ws[..] {
            [c0, co, k, k2] if c0 == ci && k == k2 => (co, k),
            _ => return Err(Error::shape("conv_transpose2d", format!("weight {ws:?} for {ci} input channels"))),
        };
        let ho = kernels::conv_transpose_out_len(h, k, stride, pad, output_pad)?;
        let wo = kernels::conv_transpose_out_len(wd, k, stride, pad, output_pad)?;
        self.check_bias(bias, co, "conv_transpose2d")?;
        // The adjoint convolution reads the large output plane and writes x.
        let geom = ConvGeom { cin: co, h: ho, w: wo, cout: ci, ho: h, wo: wd, k, stride, pad, groups: 1 };
        let mut data = vec![T::zero(); co * ho * wo];
        kernels::conv_scatter(&geom, self.value(x).data(), self.value(w).data(), &mut data);
        self.add_bias(&mut data, bias, co);
        let rg = self.rg(x) || self.rg(w) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor { shape: vec![co, ho, wo], data }, Op::ConvTranspose { x, w, bias, geom }, rg))
    }

    /// Max pooling over `[C, H, W]`; inputs that do not tile exactly are
    /// zero-padded on the right and bottom.
    pub fn maxpool2d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let [c, h, w] = self.chw(x, "maxpool2d")?;
        if window == 0 || stride == 0 {
            return Err(Error::InvalidArgument("maxpool window and stride must be positive".into()));
        }
        let (data, arg) = kernels::maxpool2d(self.value(x).data(), c, h, w, window, stride);
        let shape = vec![c, kernels::pool_out_len(h, window, stride), kernels::pool_out_len(w, window, stride)];
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape, data }, Op::MaxPool { x, arg }, rg))
    }

    // ---------------------------------------------------------------- backward

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let mut send = |v: Var, t: Tensor<T>| {
            if self.rg(v) {
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot => *slot = Some(t),
                }
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary { kind, a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let out_shape = node.value.shape();
                let ma = (ta.shape() != out_shape).then(|| kernels::broadcast_map(out_shape, ta.shape()));
                let mb = (tb.shape() != out_shape).then(|| kernels::broadcast_map(out_shape, tb.shape()));
                let ia = |k: usize| ma.as_ref().map_or(k, |m| m[k]);
                let ib = |k: usize| mb.as_ref().map_or(k, |m| m[k]);
                let mut ga = Tensor::zeros(ta.shape());
                let mut gb = Tensor::zeros(tb.shape());
                let (va, vb) = (ta.data(), tb.data());
                for (k, &gk) in gd.iter().enumerate() {
                    let (x, y) = (va[ia(k)], vb[ib(k)]);
                    let (da, db) = match kind {
                        Binary::Add => (gk, gk),
                        Binary::Sub => (gk, -gk),
                        Binary::Mul => (gk * y, gk * x),
                        Binary::Div => (gk / y, -gk * x / (y * y)),
                    };
                    ga.data[ia(k)] += da;
                    gb.data[ib(k)] += db;
                }
                send(*a, ga);
                send(*b, gb);
            }
            Op::Scale { x, c } => send(*x, g.map(|v| v * *c)),
            Op::Offset { x } => send(*x, g.clone()),
            Op::Gelu { x } => {
                let xv = self.value(*x);
                send(*x, zip_map(xv, g, |xv, gv| gv * gelu_grad(xv)));
            }
            Op::Softplus { x } => {
                let xv = self.value(*x);
                send(*x, zip_map(xv, g, |xv, gv| gv * sigmoid(xv)));
            }
            Op::Sqrt { x } => send(*x, zip_map(&node.value, g, |y, gv| gv / (T::of(2.0) * y))),
            Op::Exp { x } => send(*x, zip_map(&node.value, g, |y, gv| gv * y)),
            Op::Reshape { x } => {
                let s = self.shape(*x).to_vec();
                send(*x, g.clone().reshape(&s).expect("reshape grad"));
            }
            Op::Transpose { x } => {
                let s = self.shape(*x);
                let (m, n) = (s[0], s[1]);
                let mut t = Tensor::zeros(&[m, n]);
                for i in 0..m {
                    for j in 0..n {
                        t.data[i * n + j] = gd[j * m + i];
                    }
                }
                send(*x, t);
            }
            Op::Sum { x } => send(*x, Tensor::full(self.shape(*x), gd[0])),
            Op::SumAxis { x, axis } => {
                let s = self.shape(*x).to_vec();
                let (outer, n, inner) = kernels::axis_split(&s, *axis);
                let mut t = Tensor::zeros(&s);
                for o in 0..outer {
                    for k in 0..n {
                        let dst = &mut t.data[(o * n + k) * inner..(o * n + k + 1) * inner];
                        dst.copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                send(*x, t);
            }
            Op::Concat { xs, axis } => {
                let out_shape = node.value.shape();
                let (outer, total, inner) = kernels::axis_split(out_shape, *axis);
                let mut start = 0;
                for &v in xs {
                    let len = self.shape(v)[*axis];
                    let mut t = Tensor::zeros(self.shape(v));
                    for o in 0..outer {
                        let src = &gd[(o * total + start) * inner..(o * total + start + len) * inner];
                        t.data[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
                    }
                    send(v, t);
                    start += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let s = self.shape(*x).to_vec();
                let (outer, n, inner) = kernels::axis_split(&s, *axis);
                let len = node.value.shape()[*axis];
                let mut t = Tensor::zeros(&s);
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    t.data[base..base + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                send(*x, t);
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, n, inner) = kernels::axis_split(node.value.shape(), *axis);
                let mut t = Tensor::zeros(node.value.shape());
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * n + k) * inner + i;
                        let dot: T = (0..n).map(|k| gd[at(k)] * y[at(k)]).sum();
                        for k in 0..n {
                            t.data[at(k)] = y[at(k)] * (gd[at(k)] - dot);
                        }
                    }
                }
                send(*x, t);
            }
            Op::LayerNorm { x, axis, inv_std } => {
                let y = node.value.data();
                let (outer, n, inner) = kernels::axis_split(node.value.shape(), *axis);
                let nt = T::of(n as f64);
                let mut t = Tensor::zeros(node.value.shape());
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * n + k) * inner + i;
                        let mg = (0..n).map(|k| gd[at(k)]).sum::<T>() / nt;
                        let mgy = (0..n).map(|k| gd[at(k)] * y[at(k)]).sum::<T>() / nt;
                        let is = inv_std[o * inner + i];
                        for k in 0..n {
                            t.data[at(k)] = is * (gd[at(k)] - mg - y[at(k)] * mgy);
                        }
                    }
                }
                send(*x, t);
            }
            Op::MatMul { a, b, ta, tb } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (sa, sb) = ([va.shape()[0], va.shape()[1]], [vb.shape()[0], vb.shape()[1]]);
                let sg = [g.shape()[0], g.shape()[1]];
                if self.rg(*a) {
                    // C = op(A) op(B): dA = G op(B)^T, or its transpose when A is read transposed.
                    let (d, s) = if *ta {
                        kernels::matmul(vb.data(), sb, *tb, gd, sg, true)
                    } else {
                        kernels::matmul(gd, sg, false, vb.data(), sb, !*tb)
                    };
                    send(*a, Tensor { shape: s.to_vec(), data: d });
                }
                if self.rg(*b) {
                    let (d, s) = if *tb {
                        kernels::matmul(gd, sg, true, va.data(), sa, *ta)
                    } else {
                        kernels::matmul(va.data(), sa, !*ta, gd, sg, false)
                    };
                    send(*b, Tensor { shape: s.to_vec(), data: d });
                }
            }
            Op::Conv { x, w, bias, geom } => {
                if self.rg(*x) {
                    let mut t = Tensor::zeros(self.shape(*x));
                    kernels::conv_scatter(geom, gd, self.value(*w).data(), &mut t.data);
                    send(*x, t);
                }
                if self.rg(*w) {
                    let mut t = Tensor::zeros(self.shape(*w));
                    kernels::conv_weight_grad(geom, self.value(*x).data(), gd, &mut t.data);
                    send(*w, t);
                }
                if let Some(b) = bias {
                    send(*b, Tensor::from_vec(kernels::channel_sums(gd, geom.cout)));
                }
            }
            Op::ConvTranspose { x, w, bias, geom } => {
                if self.rg(*x) {
                    let mut t = Tensor::zeros(self.shape(*x));
                    kernels::conv_gather(geom, gd, self.value(*w).data(), &mut t.data);
                    send(*x, t);
                }
                if self.rg(*w) {
                    let mut t = Tensor::zeros(self.shape(*w));
                    kernels::conv_weight_grad(geom, gd, self.value(*x).data(), &mut t.data);
                    send(*w, t);
                }
                if let Some(b) = bias {
                    send(*b, Tensor::from_vec(kernels::channel_sums(gd, geom.cin)));
                }
            }
            Op::MaxPool { x, arg } => {
                let mut t = Tensor::zeros(self.shape(*x));
                for (&src, &gv) in arg.iter().zip(gd) {
                    if src != usize::MAX {
                        t.data[src] += gv;
                    }
                }
                send(*x, t);
            }
        }
    }
}

fn zip_map<T: Element>(a: &Tensor<T>, g: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor { shape: a.shape.clone(), data: a.data.iter().zip(&g.data).map(|(&x, &y)| f(x, y)).collect() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn elementwise_examples() {
        let mut g = Graph::<f64>::new();
        let a = g.input(t(&[3], &[1.0, 2.0, 3.0]));
        let b = g.input(t(&[3], &[4.0, 5.0, 6.0]));
        let m = g.mul(a, b).unwrap();
        assert_eq!(g.value(m).data(), &[4.0, 10.0, 18.0]);
        let z = g.add_scalar(a, 0.0);
        assert_eq!(g.value(z), g.value(a));
        let c = g.input(t(&[2], &[1.0, 1.0]));
        assert!(matches!(g.add(a, c), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn matmul_examples() {
        let mut g = Graph::<f64>::new();
        let a = g.input(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.input(t(&[2, 1], &[1.0, 1.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[3.0, 7.0]);
        let eye = g.input(t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        let x = g.input(t(&[3, 1], &[7.0, -2.0, 0.5]));
        let y = g.matmul(eye, x).unwrap();
        assert_eq!(g.value(y), g.value(x));
        assert!(g.matmul(a, x).is_err());
    }

    #[test]
    fn conv_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_fn(&[1, 4, 5], |i| i as f64));
        let w = g.input(Tensor::ones(&[1, 1, 1, 1]));
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let x = g.input(Tensor::ones(&[1, 3, 3]));
        let w = g.input(Tensor::ones(&[1, 1, 3, 3]));
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 1]);
        assert_eq!(g.value(y).item(), 9.0);

        let x = g.input(Tensor::ones(&[1, 4, 4]));
        assert!(g.conv2d(x, w, None, 2, 1).is_err());
    }

    #[test]
    fn maxpool_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.maxpool2d(x, 2, 2).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
        let c = g.input(Tensor::full(&[2, 4, 6], 0.7));
        let y = g.maxpool2d(c, 2, 2).unwrap();
        assert_eq!(g.shape(y), &[2, 2, 3]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn maxpool_pads_odd_sizes() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::full(&[1, 3, 3], -1.0));
        let y = g.maxpool2d(x, 2, 2).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 2]);
        assert_eq!(g.value(y).data(), &[-1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_gelu_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[2], &[0.0, 0.0]));
        let s = g.softmax(x, 0).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
        let z = g.input(t(&[1], &[0.0]));
        let y = g.gelu(z);
        assert_eq!(g.value(y).item(), 0.0);
    }

    #[test]
    fn softmax_high_precision_reference() {
        // e^k / (e + e^2 + e^3), k = 1, 2, 3, to 17 significant digits.
        let want = [0.090_030_573_170_380_46, 0.244_728_471_054_797_64, 0.665_240_955_774_821_9];
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[3], &[1.0, 2.0, 3.0]));
        let s = g.softmax(x, 0).unwrap();
        let v = g.value(s).data();
        for (a, b) in v.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn layernorm_moments() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_fn(&[5, 2, 3], |i| ((i * 37 % 11) as f64).sin() * 3.0 + 1.0));
        let y = g.layernorm(x, 0, 0.0).unwrap();
        let v = g.value(y);
        for p in 0..6 {
            let col: Vec<f64> = (0..5).map(|c| v.data()[c * 6 + p]).collect();
            let mean = col.iter().sum::<f64>() / 5.0;
            let var = col.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 5.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn backward_examples() {
        let mut g = Graph::<f64>::new();
        let p = g.variable(t(&[3], &[1.0, -2.0, 0.5]));
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(p).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::<f64>::new();
        let p = g.variable(t(&[3], &[1.0, -2.0, 0.5]));
        let sq = g.mul(p, p).unwrap();
        let s = g.sum(sq);
        let l = g.scale(s, 0.5);
        g.backward(l).unwrap();
        assert_eq!(g.grad(p).unwrap().data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let p = g.variable(t(&[2], &[1.0, 2.0]));
        assert!(g.backward(p).is_err());
    }

    #[test]
    fn unreachable_leaf_has_no_grad() {
        let mut g = Graph::<f64>::new();
        let p = g.variable(t(&[2], &[1.0, 2.0]));
        let q = g.variable(t(&[2], &[3.0, 4.0]));
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert!(g.grad(q).is_none());
    }

    #[test]
    fn broadcast_grad_reduces() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::from_fn(&[2, 2, 2], |i| i as f64));
        let s = g.variable(t(&[2, 1, 1], &[2.0, 3.0]));
        let y = g.mul(x, s).unwrap();
        let l = g.sum(y);
        g.backward(l).unwrap();
        assert_eq!(g.grad(s).unwrap().data(), &[6.0, 22.0]);
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0, 3.0]);
    }
}
