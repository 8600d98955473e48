//! Synthetic hyperspectral scenes: smooth spatial abundance maps mixing a
//! handful of smooth endmember spectra, under a gentle illumination field.

use std::f64::consts::TAU;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::imaging::HyperCube;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// Inclusive range of endmembers per scene.
    pub endmembers: (usize, usize),
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig { height: 32, width: 32, bands: 8, endmembers: (3, 6) }
    }
}

/// Smooth spectrum in [0.05, 0.95] built from broad Gaussian lobes.
fn endmember(r: &mut rng::Rng, bands: usize) -> Vec<f64> {
    let lobes = r.gen_range(1..=3);
    let base = r.gen_range(0.05..0.4);
    let params: Vec<(f64, f64, f64)> = (0..lobes)
        .map(|_| (r.gen_range(-0.1..1.1), r.gen_range(0.15..0.5), r.gen_range(-0.3..0.6)))
        .collect();
    (0..bands)
        .map(|l| {
            let t = if bands > 1 { l as f64 / (bands - 1) as f64 } else { 0.5 };
            let v: f64 = base + params.iter().map(|&(c, w, a)| a * (-0.5 * ((t - c) / w).powi(2)).exp()).sum::<f64>();
            0.05 + 0.9 * v.clamp(0.0, 1.0)
        })
        .collect()
}

/// Low-frequency random field sampled on the pixel grid.
struct Field {
    terms: Vec<(f64, f64, f64, f64)>,
}

impl Field {
    fn new(r: &mut rng::Rng, terms: usize, max_freq: f64) -> Self {
        let terms = (0..terms)
            .map(|_| (r.gen_range(-max_freq..max_freq), r.gen_range(-max_freq..max_freq), r.gen_range(0.0..TAU), r.gen_range(0.3..1.0)))
            .collect();
        Field { terms }
    }

    fn at(&self, y: f64, x: f64) -> f64 {
        self.terms.iter().map(|&(u, v, phase, amp)| amp * (TAU * (u * y + v * x) + phase).cos()).sum()
    }
}

/// One scene drawn from `seed`.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<HyperCube> {
    if cfg.endmembers.0 == 0 || cfg.endmembers.0 > cfg.endmembers.1 {
        return Err(Error::InvalidArgument(format!("invalid endmember range {:?}", cfg.endmembers)));
    }
    let mut r = rng::rng(seed);
    let e = r.gen_range(cfg.endmembers.0..=cfg.endmembers.1);
    let spectra: Vec<Vec<f64>> = (0..e).map(|_| endmember(&mut r, cfg.bands)).collect();
    let fields: Vec<(Field, f64)> = (0..e).map(|_| (Field::new(&mut r, 4, 2.5), r.gen_range(1.5..5.0))).collect();
    let light = Field::new(&mut r, 2, 1.0);
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    HyperCube::from_fn(cfg.height, cfg.width, cfg.bands, |py, px, l| {
        let (y, x) = (py as f64 / h, px as f64 / w);
        let logits: Vec<f64> = fields.iter().map(|(f, sharp)| sharp * f.at(y, x)).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = weights.iter().sum();
        let illum = 0.8 + 0.2 * (light.at(y, x) / 2.0).tanh();
        illum * weights.iter().zip(&spectra).map(|(a, s)| a * s[l]).sum::<f64>() / z
    })
}

/// `n` scenes; scene `i` uses substream `i` of `seed`.
pub fn generate_scenes(n: usize, cfg: &SceneConfig, seed: u64) -> Result<Vec<HyperCube>> {
    (0..n).map(|i| generate_scene(cfg, rng::derive_seed(seed, i as u64))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_in_unit_range_and_deterministic() {
        let cfg = SceneConfig { height: 16, width: 12, bands: 5, ..Default::default() };
        let a = generate_scenes(3, &cfg, 4).unwrap();
        let b = generate_scenes(3, &cfg, 4).unwrap();
        assert_eq!(a, b);
        for s in &a {
            assert_eq!(s.dims(), (16, 12, 5));
            assert!(s.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert_ne!(a[0], a[1]);
    }
}
