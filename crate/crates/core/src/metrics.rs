//! Image-quality metrics over hyperspectral cubes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::HyperCube;

/// Value written to CSV in place of an infinite PSNR.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_dims(a: &HyperCube, b: &HyperCube, op: &'static str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mean squared error over every element of the cube.
pub fn mse(x: &HyperCube, x_ref: &HyperCube) -> Result<f64> {
    same_dims(x, x_ref, "mse")?;
    let n = x.data().len() as f64;
    Ok(x.data().iter().zip(x_ref.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// Cube-global PSNR in dB; `+inf` for identical cubes.
pub fn psnr(x: &HyperCube, x_ref: &HyperCube, max_val: f64) -> Result<f64> {
    if !(max_val > 0.0) {
        return Err(Error::InvalidArgument(format!("max_val must be positive, got {max_val}")));
    }
    let m = mse(x, x_ref)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / m).log10())
}

/// Normalized 1-D Gaussian taps.
fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size - 1) as f64 / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of an `h x w` plane.
fn filter_valid(img: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = taps.iter().enumerate().map(|(i, t)| t * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * wo + x]).sum();
        }
    }
    out
}

/// Mean SSIM of two `h x w` planes with dynamic range 1.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!("image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::shape("ssim", "plane size does not match dimensions"));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let prod = |f: fn(f64, f64) -> f64| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<f64>>();
    let mu_a = filter_valid(a, h, w, &taps);
    let mu_b = filter_valid(b, h, w, &taps);
    let aa = filter_valid(&prod(|x, _| x * x), h, w, &taps);
    let bb = filter_valid(&prod(|_, y| y * y), h, w, &taps);
    let ab = filter_valid(&prod(|x, y| x * y), h, w, &taps);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// SSIM averaged over bands.
pub fn ssim(x: &HyperCube, x_ref: &HyperCube) -> Result<f64> {
    same_dims(x, x_ref, "ssim")?;
    let (h, w, bands) = x.dims();
    if bit_identical(x, x_ref) {
        if h < SSIM_WINDOW || w < SSIM_WINDOW {
            return Err(Error::InvalidArgument(format!("image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
        }
        return Ok(1.0);
    }
    let mut total = 0.0;
    for l in 0..bands {
        total += ssim_plane(&x.band(l), &x_ref.band(l), h, w)?;
    }
    Ok(total / bands as f64)
}

fn bit_identical(a: &HyperCube, b: &HyperCube) -> bool {
    a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneQuality {
    pub scene_id: String,
    /// May be `+inf` for an exact match.
    pub psnr_db: f64,
    pub ssim: f64,
}

impl SceneQuality {
    pub fn psnr_capped(&self) -> f64 {
        self.psnr_db.min(PSNR_CAP_DB)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QualityReport {
    pub per_scene: Vec<SceneQuality>,
    /// Mean of capped PSNR values.
    pub avg_psnr_db: f64,
    pub avg_ssim: f64,
}

impl QualityReport {
    pub fn from_rows(per_scene: Vec<SceneQuality>) -> Result<Self> {
        if per_scene.is_empty() {
            return Err(Error::InvalidArgument("quality report needs at least one scene".into()));
        }
        let n = per_scene.len() as f64;
        let avg_psnr_db = per_scene.iter().map(|s| s.psnr_capped()).sum::<f64>() / n;
        let avg_ssim = per_scene.iter().map(|s| s.ssim).sum::<f64>() / n;
        Ok(QualityReport { per_scene, avg_psnr_db, avg_ssim })
    }
}

/// Scores each `(id, estimate, reference)` triple in order.
pub fn evaluate(pairs: &[(String, &HyperCube, &HyperCube)]) -> Result<QualityReport> {
    let rows = pairs
        .iter()
        .map(|(id, x, r)| Ok(SceneQuality { scene_id: id.clone(), psnr_db: psnr(x, r, 1.0)?, ssim: ssim(x, r)? }))
        .collect::<Result<Vec<_>>>()?;
    QualityReport::from_rows(rows)
}

pub fn write_report(report: &QualityReport, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "scene_id,psnr_db,ssim").map_err(io)?;
    for s in &report.per_scene {
        writeln!(w, "{},{},{}", s.scene_id, s.psnr_capped(), s.ssim).map_err(io)?;
    }
    writeln!(w, "average,{},{}", report.avg_psnr_db, report.avg_ssim).map_err(io)?;
    w.flush().map_err(io)
}

/// Evaluates and writes the CSV in one step.
pub fn report(pairs: &[(String, &HyperCube, &HyperCube)], path: &Path) -> Result<QualityReport> {
    let r = evaluate(pairs)?;
    write_report(&r, path)?;
    Ok(r)
}

pub fn read_report(path: &Path) -> Result<QualityReport> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |d: String| Error::format(path, d);
    let mut rows = Vec::new();
    let mut avg = None;
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let [id, p, s] = cells[..] else {
            return Err(bad(format!("line {}: expected 3 columns", n + 1)));
        };
        let p: f64 = p.parse().map_err(|_| bad(format!("line {}: bad psnr", n + 1)))?;
        let s: f64 = s.parse().map_err(|_| bad(format!("line {}: bad ssim", n + 1)))?;
        if id == "average" {
            avg = Some((p, s));
        } else {
            rows.push(SceneQuality { scene_id: id.to_string(), psnr_db: p, ssim: s });
        }
    }
    let (avg_psnr_db, avg_ssim) = avg.ok_or_else(|| bad("missing average row".into()))?;
    Ok(QualityReport { per_scene: rows, avg_psnr_db, avg_ssim })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_formula() {
        let a = HyperCube::zeros(2, 2, 1);
        let b = HyperCube::from_fn(2, 2, 1, |_, _, _| 0.1).unwrap();
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &HyperCube::zeros(2, 2, 2), 1.0).is_err());
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let x = HyperCube::from_fn(16, 16, 2, |h, w, l| ((h * 3 + w * 5 + l) % 7) as f64 / 7.0).unwrap();
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
        let inv = HyperCube::from_fn(16, 16, 2, |h, w, l| 1.0 - x.get(h, w, l)).unwrap();
        assert!(ssim(&x, &inv).unwrap() < 1.0);
        assert!(ssim(&HyperCube::zeros(8, 8, 1), &HyperCube::zeros(8, 8, 1)).is_err());
    }

    #[test]
    fn taps_sum_to_one() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(t[0], t[10]);
    }
}
