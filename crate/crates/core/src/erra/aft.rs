//! Adaptive feature transfer between the two encoder levels and the decoder.

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, ParamStore, Var};

use super::blocks::Fusion;
use super::layers::{Builder, Conv, ConvSpec, Init, Upsample};

#[derive(Clone, Debug)]
pub struct Aft {
    pub channels: usize,
    /// `[C, H, W] -> [C/2, H/2, W/2]`, 2x2 stride 2.
    pub reduce1: Conv,
    /// `[2C, H/2, W/2] -> [C/2, H/2, W/2]`.
    pub reduce2: Conv,
    /// 5x5 depthwise over the concatenated exclusive and common features.
    pub dconv: Conv,
    /// `C -> C/2` pointwise mix of the depthwise output.
    pub mix: Conv,
    pub restore1: Upsample,
    pub restore2: Conv,
    pub fusion1: Fusion,
    pub fusion2: Fusion,
}

pub struct AftOutput {
    pub out1: Var,
    pub out2: Var,
    pub exclusive: Var,
    pub common: Var,
}

fn reduce1_spec(c: usize) -> ConvSpec {
    ConvSpec { cin: c, cout: c / 2, k: 2, stride: 2, pad: 0, groups: 1, bias: true, init: Init::FanIn }
}

fn dconv_spec(c: usize) -> ConvSpec {
    ConvSpec { cin: c, cout: c, k: 5, stride: 1, pad: 2, groups: c, bias: true, init: Init::FanIn }
}

impl Aft {
    pub fn num_params(c: usize) -> usize {
        let h = c / 2;
        reduce1_spec(c).num_params()
            + ConvSpec::same(2 * c, h, 3).num_params()
            + dconv_spec(c).num_params()
            + ConvSpec::pointwise(c, h).num_params()
            + Upsample::num_params(h, c)
            + ConvSpec::same(h, 2 * c, 3).num_params()
            + Fusion::num_params(2 * c, c)
            + Fusion::num_params(4 * c, 2 * c)
    }

    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, c: usize) -> Result<Self> {
        if c < 2 || c % 2 != 0 {
            return Err(Error::InvalidArgument(format!("feature transfer needs an even channel count, got {c}")));
        }
        let h = c / 2;
        b.scoped(name, |b| {
            Ok(Aft {
                channels: c,
                reduce1: Conv::new(b, "reduce1", reduce1_spec(c))?,
                reduce2: Conv::new(b, "reduce2", ConvSpec::same(2 * c, h, 3))?,
                dconv: Conv::new(b, "dconv", dconv_spec(c))?,
                mix: Conv::new(b, "mix", ConvSpec::pointwise(c, h))?,
                restore1: Upsample::new(b, "restore1", h, c)?,
                restore2: Conv::new(b, "restore2", ConvSpec::same(h, 2 * c, 3))?,
                fusion1: Fusion::new(b, "fusion1", 2 * c, c)?,
                fusion2: Fusion::new(b, "fusion2", 4 * c, 2 * c)?,
            })
        })
    }

    pub fn forward_detailed<T: Element>(&self, g: &mut Graph<T>, p: &ParamStore<T>, e1: Var, e2: Var) -> Result<AftOutput> {
        let c = self.channels;
        let (s1, s2) = (g.shape(e1).to_vec(), g.shape(e2).to_vec());
        let ok = s1.len() == 3 && s2.len() == 3 && s1[0] == c && s2[0] == 2 * c && s1[1] == 2 * s2[1] && s1[2] == 2 * s2[2];
        if !ok {
            return Err(Error::shape("aft", format!("encoder features {s1:?} and {s2:?} do not form a 2x pyramid at {c} channels")));
        }
        let re1 = self.reduce1.forward(g, p, e1)?;
        let re2 = self.reduce2.forward(g, p, e2)?;
        let exclusive = g.mul(re1, re2)?;
        let common = g.add(re1, re2)?;
        let cat = g.concat(&[exclusive, common], 0)?;
        let att = self.dconv.forward(g, p, cat)?;
        let att = self.mix.forward(g, p, att)?;
        let a1 = g.mul(att, re1)?;
        let a2 = g.mul(att, re2)?;
        let con1 = self.restore1.forward(g, p, a1)?;
        let con2 = self.restore2.forward(g, p, a2)?;
        let out1 = self.fusion1.forward(g, p, &[con1, e1])?;
        let out2 = self.fusion2.forward(g, p, &[con2, e2])?;
        Ok(AftOutput { out1, out2, exclusive, common })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &ParamStore<T>, e1: Var, e2: Var) -> Result<(Var, Var)> {
        let o = self.forward_detailed(g, p, e1, e2)?;
        Ok((o.out1, o.out2))
    }
}
