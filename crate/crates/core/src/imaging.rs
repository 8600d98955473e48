//! Snapshot mosaic imaging: each pixel integrates the scene spectrum against
//! the transmission of the filter tiled over it, plus Gaussian sensor noise.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::selection::SelectionResult;
use crate::tensor::{Element, Tensor};

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";
pub const MEASUREMENT_MAGIC: &[u8; 4] = b"MSR1";

/// Floor on per-pixel filter energy in [`init_estimate`].
pub const INIT_EPS: f64 = 1e-8;

/// An `H x W x Λ` cube stored band-interleaved by pixel (λ fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct HyperCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f64>,
}

impl HyperCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::shape("cube", format!("empty cube {height}x{width}x{bands}")));
        }
        if data.len() != height * width * bands {
            return Err(Error::shape("cube", format!("{height}x{width}x{bands} needs {} values, got {}", height * width * bands, data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cube values".into()));
        }
        Ok(HyperCube { height, width, bands, data })
    }

    pub fn zeros(height: usize, width: usize, bands: usize) -> Self {
        HyperCube { height, width, bands, data: vec![0.0; height * width * bands] }
    }

    pub fn from_fn(height: usize, width: usize, bands: usize, f: impl Fn(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * bands);
        for h in 0..height {
            for w in 0..width {
                for l in 0..bands {
                    data.push(f(h, w, l));
                }
            }
        }
        Self::new(height, width, bands, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.bands)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize, l: usize) -> f64 {
        self.data[(h * self.width + w) * self.bands + l]
    }

    pub fn pixel(&self, h: usize, w: usize) -> &[f64] {
        let o = (h * self.width + w) * self.bands;
        &self.data[o..o + self.bands]
    }

    /// Band `l` as an `H x W` plane.
    pub fn band(&self, l: usize) -> Vec<f64> {
        self.data.iter().skip(l).step_by(self.bands).copied().collect()
    }

    /// Channel-first `[Λ, H, W]` tensor for the network.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let (h, w, b) = self.dims();
        Tensor::from_fn(&[b, h, w], |i| {
            let (l, p) = (i / (h * w), i % (h * w));
            T::of(self.data[p * b + l])
        })
    }

    pub fn from_tensor<T: Element>(t: &Tensor<T>) -> Result<Self> {
        let &[b, h, w] = t.shape() else {
            return Err(Error::shape("cube", format!("expected [Λ, H, W], got {:?}", t.shape())));
        };
        let src = t.data();
        let mut data = vec![0.0; b * h * w];
        for l in 0..b {
            for p in 0..h * w {
                data[p * b + l] = src[l * h * w + p].as_f64();
            }
        }
        Self::new(h, w, b, data)
    }

    /// The cube with every value rounded through `f32`, as stored on disk.
    pub fn quantized(&self) -> Self {
        HyperCube { data: self.data.iter().map(|&v| v as f32 as f64).collect(), ..*self }
    }
}

/// A linear sensing operator `A` with its adjoint.
pub trait SensingOperator {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
    fn adjoint(&self, y: &[f64], out: &mut [f64]);
    /// An upper bound on the largest eigenvalue of `AᵀA`.
    fn lipschitz(&self) -> f64;
}

/// An `s x s` periodic layout of filter spectra.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterArray {
    period: usize,
    bands: usize,
    height: usize,
    width: usize,
    /// `s² x Λ`, tile position `(i, j)` at row `i * s + j`.
    theta: Vec<f64>,
}

pub fn build_mosaic(selection: &SelectionResult, height: usize, width: usize, period: usize) -> Result<FilterArray> {
    let theta: Vec<f64> = selection.theta.values().iter().map(|&v| v as f64).collect();
    FilterArray::new(theta, selection.theta.bands(), height, width, period)
}

impl FilterArray {
    pub fn new(theta: Vec<f64>, bands: usize, height: usize, width: usize, period: usize) -> Result<Self> {
        if period == 0 || bands == 0 {
            return Err(Error::InvalidArgument("mosaic period and band count must be positive".into()));
        }
        if theta.len() != period * period * bands {
            return Err(Error::shape("mosaic", format!("period {period} needs {} spectra, got {}", period * period, theta.len() / bands)));
        }
        if height == 0 || width == 0 || height % period != 0 || width % period != 0 {
            return Err(Error::shape("mosaic", format!("{height}x{width} is not divisible by period {period}")));
        }
        if theta.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("filter transmittance outside [0, 1]".into()));
        }
        Ok(FilterArray { period, bands, height, width, theta })
    }

    /// The same filters tiled over a different sensor size.
    pub fn resized(&self, height: usize, width: usize) -> Result<Self> {
        Self::new(self.theta.clone(), self.bands, height, width, self.period)
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Filter spectrum over pixel `(h, w)`.
    #[inline]
    pub fn pixel_filter(&self, h: usize, w: usize) -> &[f64] {
        let t = (h % self.period) * self.period + w % self.period;
        &self.theta[t * self.bands..(t + 1) * self.bands]
    }

    /// The tiled `H x W x Λ` coding cube.
    pub fn mosaic(&self) -> HyperCube {
        let mut data = Vec::with_capacity(self.height * self.width * self.bands);
        for h in 0..self.height {
            for w in 0..self.width {
                data.extend_from_slice(self.pixel_filter(h, w));
            }
        }
        HyperCube { height: self.height, width: self.width, bands: self.bands, data }
    }

    /// Largest per-pixel filter energy `Σ_λ Θ²`.
    pub fn max_energy(&self) -> f64 {
        self.theta.chunks(self.bands).map(|t| t.iter().map(|v| v * v).sum::<f64>()).fold(0.0, f64::max)
    }

    fn check_cube(&self, x: &HyperCube) -> Result<()> {
        if x.bands != self.bands {
            return Err(Error::shape("encode", format!("grid mismatch: cube has {} bands, filters have {}", x.bands, self.bands)));
        }
        if x.height != self.height || x.width != self.width {
            return Err(Error::shape("encode", format!("cube {}x{} vs mosaic {}x{}", x.height, x.width, self.height, self.width)));
        }
        Ok(())
    }

    fn check_plane(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.height * self.width {
            return Err(Error::shape("adjoint", format!("{} sensor values for a {}x{} mosaic", y.len(), self.height, self.width)));
        }
        Ok(())
    }
}

impl SensingOperator for FilterArray {
    fn input_len(&self) -> usize {
        self.height * self.width * self.bands
    }

    fn output_len(&self) -> usize {
        self.height * self.width
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for h in 0..self.height {
            for w in 0..self.width {
                let p = h * self.width + w;
                let px = &x[p * self.bands..(p + 1) * self.bands];
                out[p] = self.pixel_filter(h, w).iter().zip(px).map(|(t, v)| t * v).sum();
            }
        }
    }

    fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        for h in 0..self.height {
            for w in 0..self.width {
                let p = h * self.width + w;
                for (o, t) in out[p * self.bands..(p + 1) * self.bands].iter_mut().zip(self.pixel_filter(h, w)) {
                    *o = t * y[p];
                }
            }
        }
    }

    fn lipschitz(&self) -> f64 {
        self.max_energy()
    }
}

/// Sensor readout of one snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub height: usize,
    pub width: usize,
    pub y: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Measurement {
    pub fn new(height: usize, width: usize, y: Vec<f64>, noise_sigma: f64, seed: u64) -> Result<Self> {
        if y.len() != height * width || y.is_empty() {
            return Err(Error::shape("measurement", format!("{} values for {height}x{width}", y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measurement".into()));
        }
        Ok(Measurement { height, width, y, noise_sigma, seed })
    }

    /// `[1, H, W]` tensor for the network.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        Tensor::from_fn(&[1, self.height, self.width], |i| T::of(self.y[i]))
    }
}

pub fn encode(x: &HyperCube, phi: &FilterArray, sigma: f64, seed: u64) -> Result<Measurement> {
    phi.check_cube(x)?;
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("noise sigma must be finite and >= 0, got {sigma}")));
    }
    let mut y = vec![0.0; phi.output_len()];
    phi.apply(&x.data, &mut y);
    if sigma > 0.0 {
        let mut r = rng::rng(seed);
        for v in y.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut r);
            *v += sigma * n;
        }
    }
    Measurement::new(x.height, x.width, y, sigma, seed)
}

pub fn adjoint(y: &Measurement, phi: &FilterArray) -> Result<HyperCube> {
    phi.check_plane(&y.y)?;
    let mut out = vec![0.0; phi.input_len()];
    phi.adjoint(&y.y, &mut out);
    HyperCube::new(phi.height, phi.width, phi.bands, out)
}

/// Per-pixel minimum-norm inverse of the mosaic.
pub fn init_estimate(y: &Measurement, phi: &FilterArray) -> Result<HyperCube> {
    phi.check_plane(&y.y)?;
    let mut out = vec![0.0; phi.input_len()];
    for h in 0..phi.height {
        for w in 0..phi.width {
            let p = h * phi.width + w;
            let t = phi.pixel_filter(h, w);
            let energy = t.iter().map(|v| v * v).sum::<f64>().max(INIT_EPS);
            for (o, tv) in out[p * phi.bands..(p + 1) * phi.bands].iter_mut().zip(t) {
                *o = tv * y.y[p] / energy;
            }
        }
    }
    HyperCube::new(phi.height, phi.width, phi.bands, out)
}

/// A dense `m x n` matrix operator.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    pub rows: usize,
    pub cols: usize,
    pub a: Vec<f64>,
}

impl DenseOperator {
    pub fn new(rows: usize, cols: usize, a: Vec<f64>) -> Result<Self> {
        if a.len() != rows * cols {
            return Err(Error::shape("dense operator", format!("{} entries for {rows}x{cols}", a.len())));
        }
        Ok(DenseOperator { rows, cols, a })
    }
}

impl SensingOperator for DenseOperator {
    fn input_len(&self) -> usize {
        self.cols
    }

    fn output_len(&self) -> usize {
        self.rows
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.a.chunks(self.cols)) {
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (yi, row) in y.iter().zip(self.a.chunks(self.cols)) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
    }

    /// Squared Frobenius norm.
    fn lipschitz(&self) -> f64 {
        self.a.iter().map(|v| v * v).sum()
    }
}

// ------------------------------------------------------------------ persistence

pub fn write_cube<W: Write>(x: &HyperCube, mut w: W) -> std::io::Result<()> {
    w.write_all(CUBE_MAGIC)?;
    for d in [x.height, x.width, x.bands] {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    for &v in &x.data {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    w.flush()
}

fn read_magic<R: Read>(r: &mut R, magic: &[u8; 4], path: &Path) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m).map_err(|e| Error::format(path, format!("truncated header: {e}")))?;
    if &m != magic {
        return Err(Error::format(path, format!("bad magic {m:?}, expected {}", String::from_utf8_lossy(magic))));
    }
    Ok(())
}

fn expect_eof<R: Read>(r: &mut R, path: &Path) -> Result<()> {
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if rest.is_empty() {
        Ok(())
    } else {
        Err(Error::format(path, format!("{} trailing bytes", rest.len())))
    }
}

pub fn read_cube<R: Read>(mut r: R, path: &Path) -> Result<HyperCube> {
    let trunc = |e: std::io::Error| Error::format(path, format!("truncated cube: {e}"));
    read_magic(&mut r, CUBE_MAGIC, path)?;
    let h = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let w = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let b = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let mut raw = vec![0f32; h * w * b];
    r.read_f32_into::<LittleEndian>(&mut raw).map_err(trunc)?;
    expect_eof(&mut r, path)?;
    HyperCube::new(h, w, b, raw.into_iter().map(|v| v as f64).collect()).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_measurement<W: Write>(m: &Measurement, mut w: W) -> std::io::Result<()> {
    w.write_all(MEASUREMENT_MAGIC)?;
    w.write_u32::<LittleEndian>(m.height as u32)?;
    w.write_u32::<LittleEndian>(m.width as u32)?;
    for &v in &m.y {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    w.write_f32::<LittleEndian>(m.noise_sigma as f32)?;
    w.write_u64::<LittleEndian>(m.seed)?;
    w.flush()
}

pub fn read_measurement<R: Read>(mut r: R, path: &Path) -> Result<Measurement> {
    let trunc = |e: std::io::Error| Error::format(path, format!("truncated measurement: {e}"));
    read_magic(&mut r, MEASUREMENT_MAGIC, path)?;
    let h = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let w = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let mut raw = vec![0f32; h * w];
    r.read_f32_into::<LittleEndian>(&mut raw).map_err(trunc)?;
    let sigma = r.read_f32::<LittleEndian>().map_err(trunc)? as f64;
    let seed = r.read_u64::<LittleEndian>().map_err(trunc)?;
    expect_eof(&mut r, path)?;
    Measurement::new(h, w, raw.into_iter().map(|v| v as f64).collect(), sigma, seed).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_cube(x: &HyperCube, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_cube(x, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

pub fn load_cube(path: &Path) -> Result<HyperCube> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_cube(BufReader::new(f), path)
}

pub fn save_measurement(m: &Measurement, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_measurement(m, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

pub fn load_measurement(path: &Path) -> Result<Measurement> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_measurement(BufReader::new(f), path)
}
