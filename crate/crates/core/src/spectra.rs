//! Candidate filter transmission spectra.
//!
//! A [`MetasurfaceDataset`] is an `N x Λ` matrix of transmittances sampled on
//! a shared wavelength grid. The synthetic generator draws each spectrum as a
//! clipped sum of Gaussian lobes and resamples any candidate whose adjacent
//! steps exceed the gradient threshold or whose peak-to-valley range falls
//! below the randomness floor. The lobe model is a stand-in for simulated
//! nanopillar responses.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;

pub const SPECTRA_MAGIC: &[u8; 4] = b"SPC1";

/// Default SWIR grid: 300 bands over 1000-2500 nm.
pub const DEFAULT_BANDS: usize = 300;
pub const DEFAULT_START_NM: f64 = 1000.0;
pub const DEFAULT_END_NM: f64 = 2500.0;

pub fn uniform_grid(start_nm: f64, end_nm: f64, bands: usize) -> Result<Vec<f64>> {
    if bands < 2 || !(end_nm > start_nm) {
        return Err(Error::InvalidArgument(format!("grid needs >= 2 bands over an increasing range, got {bands} over [{start_nm}, {end_nm}]")));
    }
    let step = (end_nm - start_nm) / (bands - 1) as f64;
    Ok((0..bands).map(|i| start_nm + step * i as f64).collect())
}

fn check_grid(grid: &[f64]) -> std::result::Result<(), String> {
    if grid.is_empty() {
        return Err("empty wavelength grid".into());
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err("non-finite wavelength".into());
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err("wavelength grid is not strictly increasing".into());
    }
    Ok(())
}

/// Acceptance thresholds for a single spectrum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectrumConstraints {
    /// Largest allowed |T[k+1] - T[k]|.
    pub g_max: f64,
    /// Smallest allowed max(T) - min(T).
    pub r_min: f64,
}

impl Default for SpectrumConstraints {
    fn default() -> Self {
        SpectrumConstraints { g_max: 0.08, r_min: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    OutOfRange { band: usize, value: f64 },
    Gradient { band: usize, step: f64 },
    FlatRange { range: f64 },
}

/// Checks one spectrum against `[0, 1]` bounds and the constraints.
pub fn validate_spectrum(values: &[f32], c: &SpectrumConstraints) -> std::result::Result<(), Violation> {
    for (band, &v) in values.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Violation::OutOfRange { band, value: v as f64 });
        }
    }
    for (band, w) in values.windows(2).enumerate() {
        let step = (w[1] as f64 - w[0] as f64).abs();
        if step > c.g_max {
            return Err(Violation::Gradient { band, step });
        }
    }
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)));
    if hi - lo < c.r_min {
        return Err(Violation::FlatRange { range: hi - lo });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub n: usize,
    pub seed: u64,
    pub bands: usize,
    pub start_nm: f64,
    pub end_nm: f64,
    pub constraints: SpectrumConstraints,
    /// Inclusive range of Gaussian lobes per spectrum.
    pub lobes: (usize, usize),
    /// Candidates drawn per spectrum before giving up.
    pub max_attempts: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n: 1000,
            seed: 0,
            bands: DEFAULT_BANDS,
            start_nm: DEFAULT_START_NM,
            end_nm: DEFAULT_END_NM,
            constraints: SpectrumConstraints::default(),
            lobes: (2, 8),
            max_attempts: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    Synthetic { seed: u64, constraints: SpectrumConstraints, lobes: (usize, usize) },
    File(PathBuf),
    Subset { indices: Vec<usize> },
}

/// `N` transmission spectra on one wavelength grid, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MetasurfaceDataset {
    grid: Vec<f64>,
    values: Vec<f32>,
    pub provenance: Provenance,
}

impl MetasurfaceDataset {
    pub fn new(grid: Vec<f64>, values: Vec<f32>, provenance: Provenance) -> Result<Self> {
        check_grid(&grid).map_err(Error::InvalidArgument)?;
        if values.is_empty() || values.len() % grid.len() != 0 {
            return Err(Error::shape("dataset", format!("{} values do not fill rows of {} bands", values.len(), grid.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset values".into()));
        }
        Ok(MetasurfaceDataset { grid, values, provenance })
    }

    pub fn from_rows(grid: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let bands = grid.len();
        if rows.iter().any(|r| r.len() != bands) {
            return Err(Error::shape("dataset", "row length differs from grid"));
        }
        let values = rows.iter().flatten().map(|&v| v as f32).collect();
        Self::new(grid, values, Provenance::Subset { indices: (0..rows.len()).collect() })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn bands(&self) -> usize {
        self.grid.len()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let b = self.bands();
        &self.values[i * b..(i + 1) * b]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks(self.bands())
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// The listed rows, copied verbatim.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.bands());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!("row {i} out of range for {} spectra", self.len())));
            }
            values.extend_from_slice(self.row(i));
        }
        Self::new(self.grid.clone(), values, Provenance::Subset { indices: indices.to_vec() })
    }

    /// Every row that violates `c`, with its first violation.
    pub fn violations(&self, c: &SpectrumConstraints) -> Vec<(usize, Violation)> {
        self.rows().enumerate().filter_map(|(i, r)| validate_spectrum(r, c).err().map(|v| (i, v))).collect()
    }
}

fn draw_candidate(rng: &mut rng::Rng, grid: &[f64], lobes: (usize, usize)) -> Vec<f32> {
    let (start, end) = (grid[0], grid[grid.len() - 1]);
    let span = end - start;
    let n_lobes = rng.gen_range(lobes.0..=lobes.1);
    let baseline = rng.gen_range(0.0..0.3);
    let params: Vec<(f64, f64, f64)> = (0..n_lobes)
        .map(|_| {
            let center = rng.gen_range(start..=end);
            let width = rng.gen_range(0.02..0.12) * span;
            let amp = rng.gen_range(0.15..0.8);
            (center, width, amp)
        })
        .collect();
    grid.iter()
        .map(|&wl| {
            let s: f64 = params.iter().map(|&(c, w, a)| a * (-0.5 * ((wl - c) / w).powi(2)).exp()).sum();
            (0.05 + 0.9 * (baseline + s).clamp(0.0, 1.0)) as f32
        })
        .collect()
}

/// Draws `cfg.n` validated spectra. Spectrum `i` uses its own substream of
/// `cfg.seed`, so the output does not depend on thread scheduling.
pub fn generate_synthetic(cfg: &GeneratorConfig) -> Result<MetasurfaceDataset> {
    if cfg.n == 0 {
        return Err(Error::InvalidArgument("spectrum count must be at least 1".into()));
    }
    let c = cfg.constraints;
    if !(c.g_max > 0.0 && c.g_max <= 1.0) {
        return Err(Error::InvalidArgument(format!("g_max must lie in (0, 1], got {}", c.g_max)));
    }
    if cfg.lobes.0 == 0 || cfg.lobes.0 > cfg.lobes.1 {
        return Err(Error::InvalidArgument(format!("invalid lobe range {:?}", cfg.lobes)));
    }
    let grid = uniform_grid(cfg.start_nm, cfg.end_nm, cfg.bands)?;
    let rows: Vec<Vec<f32>> = (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::rng(rng::derive_seed(cfg.seed, i as u64));
            for _ in 0..cfg.max_attempts {
                let cand = draw_candidate(&mut r, &grid, cfg.lobes);
                if validate_spectrum(&cand, &c).is_ok() {
                    return Ok(cand);
                }
            }
            Err(Error::RejectionBudgetExceeded { index: i, attempts: cfg.max_attempts })
        })
        .collect::<Result<_>>()?;
    let values = rows.into_iter().flatten().collect();
    MetasurfaceDataset::new(grid, values, Provenance::Synthetic { seed: cfg.seed, constraints: c, lobes: cfg.lobes })
}

/// Dense square matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::shape("matrix", format!("{} values for {n}x{n}", data.len())));
        }
        Ok(SquareMatrix { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Largest off-diagonal |entry|; 0 for a 1x1 matrix.
    pub fn max_abs_offdiag(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    m = m.max(self.get(i, j).abs());
                }
            }
        }
        m
    }
}

/// Row moments and pairwise Pearson correlations, population-normalized
/// (divide by Λ).
#[derive(Clone, Debug)]
pub struct CorrelationStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub cov: SquareMatrix,
    pub p: SquareMatrix,
}

pub fn pearson_stats(dataset: &MetasurfaceDataset) -> Result<CorrelationStats> {
    let n = dataset.len();
    let bands = dataset.bands() as f64;
    let mut mu = Vec::with_capacity(n);
    let mut centered: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    for (i, row) in dataset.rows().enumerate() {
        let m = row.iter().map(|&v| v as f64).sum::<f64>() / bands;
        let c: Vec<f64> = row.iter().map(|&v| v as f64 - m).collect();
        let var = c.iter().map(|d| d * d).sum::<f64>() / bands;
        if var <= 0.0 {
            return Err(Error::DegenerateSpectrum { row: i });
        }
        mu.push(m);
        sigma.push(var.sqrt());
        centered.push(c);
    }
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum::<f64>() / bands).collect())
        .collect();
    let mut cov = SquareMatrix::zeros(n);
    let mut p = SquareMatrix::zeros(n);
    for i in 0..n {
        for (off, &c) in upper[i].iter().enumerate() {
            let j = i + off;
            let r = c / (sigma[i] * sigma[j]);
            cov.set(i, j, c);
            cov.set(j, i, c);
            p.set(i, j, r);
            p.set(j, i, r);
        }
    }
    Ok(CorrelationStats { mu, sigma, cov, p })
}

/// Pearson correlation of two equal-length series.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa.sqrt() * sbb.sqrt())
}

// ------------------------------------------------------------------ persistence

pub fn write_spectra<W: Write>(ds: &MetasurfaceDataset, mut w: W) -> std::io::Result<()> {
    w.write_all(SPECTRA_MAGIC)?;
    w.write_u32::<LittleEndian>(ds.len() as u32)?;
    w.write_u32::<LittleEndian>(ds.bands() as u32)?;
    for &g in ds.grid() {
        w.write_f64::<LittleEndian>(g)?;
    }
    for &v in ds.values() {
        w.write_f32::<LittleEndian>(v)?;
    }
    w.flush()
}

pub fn read_spectra<R: Read>(mut r: R, path: &Path) -> Result<MetasurfaceDataset> {
    let fmt = |d: String| Error::format(path, d);
    let trunc = |e: std::io::Error| Error::format(path, format!("truncated spectra file: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != SPECTRA_MAGIC {
        return Err(fmt(format!("bad magic {magic:?}, expected SPC1")));
    }
    let n = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let bands = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    if n == 0 || bands == 0 {
        return Err(fmt(format!("empty dataset header ({n} x {bands})")));
    }
    let mut grid = vec![0f64; bands];
    r.read_f64_into::<LittleEndian>(&mut grid).map_err(trunc)?;
    check_grid(&grid).map_err(|d| fmt(format!("grid mismatch: {d}")))?;
    let mut values = vec![0f32; n * bands];
    r.read_f32_into::<LittleEndian>(&mut values).map_err(trunc)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(fmt(format!("{} trailing bytes after {n} x {bands} values", rest.len())));
    }
    MetasurfaceDataset::new(grid, values, Provenance::File(path.to_path_buf()))
        .map_err(|e| fmt(e.to_string()))
}

pub fn save(ds: &MetasurfaceDataset, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_spectra(ds, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<MetasurfaceDataset> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_spectra(BufReader::new(f), path)
}

/// One row per spectrum; the header lists the wavelengths.
pub fn write_csv(ds: &MetasurfaceDataset, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let header: Vec<String> = ds.grid().iter().map(|g| g.to_string()).collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for row in ds.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(n: usize, seed: u64) -> GeneratorConfig {
        GeneratorConfig { n, seed, ..Default::default() }
    }

    #[test]
    fn zero_count_rejected() {
        assert!(matches!(generate_synthetic(&small_cfg(0, 1)), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn same_seed_bit_identical() {
        let a = generate_synthetic(&small_cfg(20, 3)).unwrap();
        let b = generate_synthetic(&small_cfg(20, 3)).unwrap();
        let bits = |d: &MetasurfaceDataset| d.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = generate_synthetic(&small_cfg(20, 4)).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn infeasible_constraints_exhaust_budget() {
        let cfg = GeneratorConfig {
            n: 2,
            bands: 16,
            constraints: SpectrumConstraints { g_max: 0.001, r_min: 0.3 },
            max_attempts: 50,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::RejectionBudgetExceeded { .. })));
    }

    #[test]
    fn validator_flags_each_violation() {
        let c = SpectrumConstraints { g_max: 0.1, r_min: 0.3 };
        assert!(matches!(validate_spectrum(&[0.1, 1.2], &c), Err(Violation::OutOfRange { band: 1, .. })));
        assert!(matches!(validate_spectrum(&[0.1, 0.5], &c), Err(Violation::Gradient { band: 0, .. })));
        assert!(matches!(validate_spectrum(&[0.1, 0.15, 0.2], &c), Err(Violation::FlatRange { .. })));
        assert!(validate_spectrum(&[0.1, 0.18, 0.26, 0.34, 0.42], &c).is_ok());
    }

    #[test]
    fn perfect_and_anti_correlation() {
        let grid = vec![1.0, 2.0, 3.0, 4.0];
        let u = vec![0.1, 0.4, 0.2, 0.3];
        let v: Vec<f64> = u.iter().map(|x| 2.0 * x + 1.0).collect();
        let ds = MetasurfaceDataset::from_rows(grid.clone(), &[u, v]).unwrap();
        let s = pearson_stats(&ds).unwrap();
        assert!((s.p.get(0, 1) - 1.0).abs() < 1e-6);

        let ds = MetasurfaceDataset::from_rows(grid, &[vec![1.0, 0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 1.0]]).unwrap();
        let s = pearson_stats(&ds).unwrap();
        assert_eq!(s.p.get(0, 1), -1.0);
    }

    #[test]
    fn zero_variance_row_named() {
        let ds = MetasurfaceDataset::from_rows(vec![1.0, 2.0, 3.0], &[vec![0.1, 0.2, 0.3], vec![0.5, 0.5, 0.5]]).unwrap();
        assert!(matches!(pearson_stats(&ds), Err(Error::DegenerateSpectrum { row: 1 })));
    }

    #[test]
    fn wrong_magic() {
        let err = read_spectra(&b"SPC2\x01\0\0\0"[..], Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn truncated_and_bad_grid() {
        let ds = generate_synthetic(&GeneratorConfig { n: 3, bands: 16, constraints: SpectrumConstraints { g_max: 0.5, r_min: 0.3 }, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        write_spectra(&ds, &mut buf).unwrap();
        assert!(read_spectra(&buf[..buf.len() - 2], Path::new("mem")).is_err());
        // Swap the first two grid entries.
        let mut bad = buf.clone();
        let (a, b) = (12..20, 20..28);
        let first: Vec<u8> = bad[a.clone()].to_vec();
        let second: Vec<u8> = bad[b.clone()].to_vec();
        bad[a].copy_from_slice(&second);
        bad[b].copy_from_slice(&first);
        let err = read_spectra(&bad[..], Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("grid"));
        let back = read_spectra(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back.values(), ds.values());
        assert_eq!(back.grid(), ds.grid());
    }
}
