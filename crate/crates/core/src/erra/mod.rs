//! Learned proximal operator and its unfolded reconstruction model.
//!
//! An [`ErraModel`] holds `K` learnable step sizes and either one proximal
//! network reused by every stage or one network per stage. The query priors
//! of the low-rank branches are registered once per model and shared by all
//! stages either way.

pub mod aft;
pub mod blocks;
pub mod layers;
pub mod unet;

use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{init_estimate, FilterArray, HyperCube, Measurement};
use crate::rng;
use crate::tensor::{load_checkpoint, save_checkpoint, Element, Graph, ParamId, ParamStore, Tensor, Var};

pub use aft::Aft;
pub use blocks::{softplus_inv, FeedForward, Fusion, Lrpl, S2lrBlock, Sspl};
pub use layers::Builder;
pub use unet::{NetShape, ProximalUNet, PRIOR_NAMES};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErraConfig {
    pub net: NetShape,
    pub stages: usize,
    pub share_params: bool,
    /// Initial gradient step size of every stage.
    pub rho_init: f64,
}

impl ErraConfig {
    pub fn new(bands: usize, channels: usize, stages: usize) -> Self {
        ErraConfig { net: NetShape { bands, channels, reduction: 4, queries: 8 }, stages, share_params: true, rho_init: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.stages == 0 {
            return Err(Error::InvalidArgument("stage count must be at least 1".into()));
        }
        if !(self.rho_init > 0.0 && self.rho_init.is_finite()) {
            return Err(Error::InvalidArgument(format!("rho_init must be positive, got {}", self.rho_init)));
        }
        Ok(())
    }
}

/// Stage-wise tape outputs of one unfolded pass.
pub struct UnfoldTrace {
    /// Gradient-step outputs `r_k`.
    pub steps: Vec<Var>,
    /// Proximal outputs `x_k`.
    pub estimates: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct ErraModel<T: Element> {
    pub config: ErraConfig,
    pub nets: Vec<ProximalUNet>,
    /// Raw step sizes; the step used is `softplus(raw)`.
    pub rho: Vec<ParamId>,
    pub store: ParamStore<T>,
}

impl<T: Element> ErraModel<T> {
    pub fn new(config: ErraConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut r = rng::rng(seed);
        let mut b = Builder::new(&mut store, &mut r);
        let nets = if config.share_params {
            vec![b.scoped("net", |b| ProximalUNet::new(b, config.net))?]
        } else {
            (0..config.stages).map(|k| b.scoped(&format!("stage{k}"), |b| ProximalUNet::new(b, config.net))).collect::<Result<_>>()?
        };
        let raw = softplus_inv(config.rho_init);
        let rho = (0..config.stages).map(|k| b.constant(&format!("rho.{k}"), Tensor::scalar(T::of(raw)))).collect::<Result<_>>()?;
        Ok(ErraModel { config, nets, rho, store })
    }

    pub fn net(&self, stage: usize) -> &ProximalUNet {
        &self.nets[if self.config.share_params { 0 } else { stage }]
    }

    /// Current step sizes.
    pub fn step_sizes(&self) -> Vec<f64> {
        self.rho.iter().map(|&id| crate::tensor::softplus_value(self.store.value(id).item().as_f64())).collect()
    }

    /// Records `K` stages of `r = x - rho Θᵀ(Θx - y)`, `x = prox(r)` on `g`.
    /// `theta: [Λ, H, W]`, `y: [1, H, W]`, `x0: [Λ, H, W]`.
    pub fn unfold(&self, g: &mut Graph<T>, p: &ParamStore<T>, theta: Var, y: Var, x0: Var) -> Result<UnfoldTrace> {
        let mut x = x0;
        let mut trace = UnfoldTrace { steps: Vec::new(), estimates: Vec::new() };
        for k in 0..self.config.stages {
            let r = gradient_step_graph(g, theta, y, x, p, self.rho[k])?;
            x = self.net(k).forward(g, p, r)?;
            trace.steps.push(r);
            trace.estimates.push(x);
        }
        Ok(trace)
    }

    /// Final-stage estimate for a measurement.
    pub fn reconstruct(&self, y: &Measurement, phi: &FilterArray) -> Result<HyperCube> {
        let (_, mut xs) = self.reconstruct_detailed(y, phi)?;
        Ok(xs.pop().expect("at least one stage"))
    }

    /// Gradient-step outputs and estimates of every stage.
    pub fn reconstruct_detailed(&self, y: &Measurement, phi: &FilterArray) -> Result<(Vec<HyperCube>, Vec<HyperCube>)> {
        let x0 = init_estimate(y, phi)?;
        let mut g = Graph::new();
        let theta = g.input(phi.mosaic().to_tensor());
        let yv = g.input(y.to_tensor());
        let xv = g.input(x0.to_tensor());
        let trace = self.unfold(&mut g, &self.store, theta, yv, xv)?;
        let read = |k: usize, v: Var, what: &str| {
            let t = g.value(v);
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("{what} at stage {}", k + 1)));
            }
            HyperCube::from_tensor(t)
        };
        let mut rs = Vec::with_capacity(trace.steps.len());
        let mut xs = Vec::with_capacity(trace.steps.len());
        for (k, (&r, &x)) in trace.steps.iter().zip(&trace.estimates).enumerate() {
            rs.push(read(k, r, "gradient step")?);
            xs.push(read(k, x, "estimate")?);
        }
        Ok((rs, xs))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.store, path)
    }

    /// Builds a model for `config` and fills it from an ERP1 checkpoint.
    pub fn load(config: ErraConfig, path: &Path) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        let entries = load_checkpoint(path)?;
        m.store.load_values(&entries).map_err(|e| Error::format(path, e.to_string()))?;
        Ok(m)
    }

    pub fn cast<U: Element>(&self) -> ErraModel<U> {
        ErraModel { config: self.config, nets: self.nets.clone(), rho: self.rho.clone(), store: self.store.cast() }
    }
}

/// `x - softplus(rho_raw) Θᵀ(Σ_λ Θ x - y)` on the tape.
pub fn gradient_step_graph<T: Element>(g: &mut Graph<T>, theta: Var, y: Var, x: Var, p: &ParamStore<T>, rho_raw: ParamId) -> Result<Var> {
    let tx = g.mul(theta, x)?;
    let ax = g.sum_axis(tx, 0)?;
    let res = g.sub(ax, y)?;
    let back = g.mul(theta, res)?;
    let raw = g.param(p, rho_raw);
    let rho = g.softplus(raw);
    let step = g.mul(back, rho)?;
    g.sub(x, step)
}
