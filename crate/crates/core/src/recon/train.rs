//! End-to-end training of the unfolded model with batch size 1.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::erra::ErraModel;
use crate::error::{Error, Result};
use crate::imaging::{encode, init_estimate, FilterArray, HyperCube};
use crate::rng;
use crate::tensor::{Adam, AdamConfig, Graph};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Sensor noise added to each freshly encoded sample.
    pub noise_sigma: f64,
    /// Square crop side; `None` keeps the full scene.
    pub crop: Option<usize>,
    /// Random 90° rotations and horizontal flips.
    pub rotate_flip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 50, lr: 2e-4, seed: 0, noise_sigma: 0.0, crop: None, rotate_flip: true }
    }
}

/// One draw of the geometric augmentations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augmentation {
    pub top: usize,
    pub left: usize,
    pub size: Option<usize>,
    /// Counter-clockwise quarter turns.
    pub quarter_turns: u8,
    pub flip: bool,
}

impl Augmentation {
    pub fn identity() -> Self {
        Augmentation { top: 0, left: 0, size: None, quarter_turns: 0, flip: false }
    }

    pub fn draw(r: &mut rng::Rng, height: usize, width: usize, cfg: &TrainConfig) -> Self {
        let (top, left) = match cfg.crop {
            Some(c) => (r.gen_range(0..=height - c), r.gen_range(0..=width - c)),
            None => (0, 0),
        };
        let (quarter_turns, flip) = if cfg.rotate_flip { (r.gen_range(0..4u8), r.gen_bool(0.5)) } else { (0, false) };
        Augmentation { top, left, size: cfg.crop, quarter_turns, flip }
    }
}

/// Crops, rotates, then flips `x`.
pub fn augment(x: &HyperCube, a: &Augmentation) -> Result<HyperCube> {
    let (h, w, b) = x.dims();
    let (ch, cw) = a.size.map_or((h, w), |s| (s, s));
    if a.top + ch > h || a.left + cw > w {
        return Err(Error::InvalidArgument(format!("crop {ch}x{cw} at ({}, {}) exceeds {h}x{w}", a.top, a.left)));
    }
    let turns = a.quarter_turns % 4;
    let (oh, ow) = if turns % 2 == 0 { (ch, cw) } else { (cw, ch) };
    HyperCube::from_fn(oh, ow, b, |i, j, l| {
        let j = if a.flip { ow - 1 - j } else { j };
        // Output (i, j) of a counter-clockwise turn reads the source pixel below.
        let (si, sj) = match turns {
            0 => (i, j),
            1 => (j, cw - 1 - i),
            2 => (ch - 1 - i, cw - 1 - j),
            _ => (ch - 1 - j, i),
        };
        x.get(a.top + si, a.left + sj, l)
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean step loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

impl TrainReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(w, "epoch,loss").map_err(io)?;
        for (e, l) in self.epoch_losses.iter().enumerate() {
            writeln!(w, "{},{}", e + 1, l).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Minimizes the mean squared error of the final stage against each scene.
/// Every step re-encodes the augmented scene through `filters` tiled to its
/// size. `on_epoch` sees the epoch index and mean loss.
pub fn train(
    model: &mut ErraModel<f32>,
    scenes: &[HyperCube],
    filters: &FilterArray,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one scene".into()));
    }
    if !(cfg.lr >= 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be >= 0, got {}", cfg.lr)));
    }
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..Default::default() });
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::rng(rng::derive_seed(cfg.seed, epoch as u64)));
        let mut total = 0.0;
        for (step, &idx) in order.iter().enumerate() {
            let step_seed = rng::derive_seed(cfg.seed ^ 0xA5A5_5A5A_0F0F_F0F0, report.steps);
            let mut r = rng::rng(step_seed);
            let scene = &scenes[idx];
            let aug = Augmentation::draw(&mut r, scene.height(), scene.width(), cfg);
            let target = augment(scene, &aug)?;
            let phi = filters.resized(target.height(), target.width())?;
            let y = encode(&target, &phi, cfg.noise_sigma, r.gen())?;
            let x0 = init_estimate(&y, &phi)?;

            let mut g = Graph::new();
            let theta = g.input(phi.mosaic().to_tensor());
            let yv = g.input(y.to_tensor());
            let xv = g.input(x0.to_tensor());
            let truth = g.input(target.to_tensor());
            let trace = model.unfold(&mut g, &model.store, theta, yv, xv)?;
            let last = *trace.estimates.last().expect("at least one stage");
            let d = g.sub(last, truth)?;
            let sq = g.mul(d, d)?;
            let loss = g.mean(sq);
            let lv = g.value(loss).item() as f64;
            if !lv.is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1, step: step + 1, loss: lv });
            }
            g.backward(loss)?;
            model.store.zero_grads();
            g.accumulate_param_grads(&mut model.store);
            adam.step(&mut model.store);
            total += lv;
            report.steps += 1;
        }
        let mean = total / scenes.len() as f64;
        report.epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(report)
}
