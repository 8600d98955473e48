//! Three-level U-shaped proximal network.

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, ParamStore, Var};

use super::aft::Aft;
use super::blocks::{Fusion, LowRank, S2lrBlock};
use super::layers::{Builder, Conv, ConvSpec, Upsample};

/// Width and prior settings of one proximal network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetShape {
    pub bands: usize,
    pub channels: usize,
    pub reduction: usize,
    pub queries: usize,
}

impl NetShape {
    pub fn validate(&self) -> Result<()> {
        let NetShape { bands, channels: c, reduction: r, queries: m } = *self;
        if bands == 0 || m == 0 {
            return Err(Error::InvalidArgument("band and query counts must be positive".into()));
        }
        if c < 2 || c % 2 != 0 {
            return Err(Error::InvalidArgument(format!("channel count must be even and >= 2, got {c}")));
        }
        if r == 0 || c % r != 0 {
            return Err(Error::InvalidArgument(format!("reduction ratio {r} does not divide {c} channels")));
        }
        Ok(())
    }
}

/// Names of the query priors, one per level that has a low-rank branch.
pub const PRIOR_NAMES: [&str; 3] = ["prior.level1", "prior.level2", "prior.bottleneck"];

#[derive(Clone, Debug)]
pub struct ProximalUNet {
    pub shape: NetShape,
    pub in_proj: Conv,
    pub enc1: S2lrBlock,
    pub down1: Conv,
    pub enc2: S2lrBlock,
    pub down2: Conv,
    pub bottleneck: S2lrBlock,
    pub aft: Aft,
    pub up2: Upsample,
    pub fuse2: Fusion,
    pub dec2: S2lrBlock,
    pub up1: Upsample,
    pub fuse1: Fusion,
    pub dec1: S2lrBlock,
    pub out_proj: Conv,
}

impl ProximalUNet {
    /// Registers a network under the builder's current prefix. Query priors
    /// are registered once per store and reused by later networks.
    pub fn new<T: Element>(b: &mut Builder<T>, shape: NetShape) -> Result<Self> {
        shape.validate()?;
        let NetShape { bands, channels: c, reduction: r, queries: m } = shape;
        let lr = |q| Some(LowRank { r, m, query: q });
        Ok(ProximalUNet {
            shape,
            in_proj: Conv::new(b, "in_proj", ConvSpec::same(bands, c, 3))?,
            enc1: S2lrBlock::new(b, "enc1", c, lr(PRIOR_NAMES[0]))?,
            down1: Conv::new(b, "down1", ConvSpec::same(c, 2 * c, 3))?,
            enc2: S2lrBlock::new(b, "enc2", 2 * c, lr(PRIOR_NAMES[1]))?,
            down2: Conv::new(b, "down2", ConvSpec::same(2 * c, 4 * c, 3))?,
            bottleneck: S2lrBlock::new(b, "bottleneck", 4 * c, lr(PRIOR_NAMES[2]))?,
            aft: Aft::new(b, "aft", c)?,
            up2: Upsample::new(b, "up2", 4 * c, 2 * c)?,
            fuse2: Fusion::new(b, "fuse2", 4 * c, 2 * c)?,
            dec2: S2lrBlock::new(b, "dec2", 2 * c, None)?,
            up1: Upsample::new(b, "up1", 2 * c, c)?,
            fuse1: Fusion::new(b, "fuse1", 2 * c, c)?,
            dec1: S2lrBlock::new(b, "dec1", c, None)?,
            out_proj: Conv::new(b, "out_proj", ConvSpec::same(c, bands, 3).zero())?,
        })
    }

    /// Maps `r: [Λ, H, W]` to a same-shape estimate; `H` and `W` must be
    /// multiples of 4.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &ParamStore<T>, r: Var) -> Result<Var> {
        match g.shape(r) {
            &[b, h, w] if b == self.shape.bands && h % 4 == 0 && w % 4 == 0 && h > 0 && w > 0 => {}
            s => return Err(Error::shape("proximal network", format!("input {s:?} needs {} bands and sides divisible by 4", self.shape.bands))),
        }
        let f0 = self.in_proj.forward(g, p, r)?;
        let e1 = self.enc1.forward(g, p, f0)?;
        let d1 = g.maxpool2d(e1, 2, 2)?;
        let d1 = self.down1.forward(g, p, d1)?;
        let e2 = self.enc2.forward(g, p, d1)?;
        let d2 = g.maxpool2d(e2, 2, 2)?;
        let d2 = self.down2.forward(g, p, d2)?;
        let z = self.bottleneck.forward(g, p, d2)?;
        let (o1, o2) = self.aft.forward(g, p, e1, e2)?;
        let u2 = self.up2.forward(g, p, z)?;
        let z2 = self.fuse2.forward(g, p, &[u2, o2])?;
        let z2 = self.dec2.forward(g, p, z2)?;
        let u1 = self.up1.forward(g, p, z2)?;
        let z1 = self.fuse1.forward(g, p, &[u1, o1])?;
        let z1 = self.dec1.forward(g, p, z1)?;
        let out = self.out_proj.forward(g, p, z1)?;
        g.add(out, r)
    }
}
