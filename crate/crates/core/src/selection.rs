//! Filter selection: greedy minimum-correlation sampling, the inner-product
//! replacement baseline, and an exhaustive min-max oracle.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::spectra::{self, pearson_stats, CorrelationStats, MetasurfaceDataset, SquareMatrix};

/// A chosen set of `k` filters.
#[derive(Clone, Debug)]
pub struct SelectionResult {
    pub indices: Vec<usize>,
    /// Selected rows, copied verbatim and ordered like `indices`.
    pub theta: MetasurfaceDataset,
    /// `k x k` absolute Pearson correlations among the selection.
    pub pairwise: SquareMatrix,
    pub max_offdiag: f64,
    /// False only when the baseline hit its iteration cap.
    pub converged: bool,
}

impl SelectionResult {
    pub fn k(&self) -> usize {
        self.indices.len()
    }

    fn build(dataset: &MetasurfaceDataset, stats: &CorrelationStats, indices: Vec<usize>, converged: bool) -> Result<Self> {
        let k = indices.len();
        let mut pairwise = SquareMatrix::zeros(k);
        for (a, &i) in indices.iter().enumerate() {
            for (b, &j) in indices.iter().enumerate() {
                pairwise.set(a, b, stats.p.get(i, j).abs());
            }
        }
        let max_offdiag = pairwise.max_abs_offdiag();
        let theta = dataset.subset(&indices)?;
        Ok(SelectionResult { indices, theta, pairwise, max_offdiag, converged })
    }
}

fn check_k(dataset: &MetasurfaceDataset, k: usize) -> Result<()> {
    if k == 0 || k > dataset.len() {
        return Err(Error::InvalidArgument(format!("cannot select {k} filters from {} spectra", dataset.len())));
    }
    Ok(())
}

/// Index of the smallest value over the allowed entries; ties go to the
/// smallest index.
fn argmin_where(values: &[f64], allowed: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if allowed(i) && best.map_or(true, |(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Row minimizing the mean |p| against all other rows.
pub fn fps_seed(stats: &CorrelationStats) -> usize {
    let n = stats.p.n();
    let means: Vec<f64> = (0..n)
        .map(|i| {
            if n == 1 {
                return 0.0;
            }
            let s: f64 = (0..n).filter(|&j| j != i).map(|j| stats.p.get(i, j).abs()).sum();
            s / (n - 1) as f64
        })
        .collect();
    argmin_where(&means, |_| true).unwrap_or(0)
}

pub fn select_fps(dataset: &MetasurfaceDataset, k: usize, use_abs: bool) -> Result<SelectionResult> {
    let stats = pearson_stats(dataset)?;
    select_fps_with_stats(dataset, &stats, k, use_abs)
}

/// Greedy selection: each round picks the row whose largest correlation to
/// the current selection is smallest.
pub fn select_fps_with_stats(dataset: &MetasurfaceDataset, stats: &CorrelationStats, k: usize, use_abs: bool) -> Result<SelectionResult> {
    check_k(dataset, k)?;
    let n = dataset.len();
    let mut d = vec![f64::NEG_INFINITY; n];
    let mut chosen = vec![false; n];
    let mut index = fps_seed(stats);
    let mut indices = Vec::with_capacity(k);
    loop {
        indices.push(index);
        chosen[index] = true;
        if indices.len() == k {
            break;
        }
        for (j, dj) in d.iter_mut().enumerate() {
            let p = stats.p.get(index, j);
            let c = if use_abs { p.abs() } else { p };
            if c > *dj {
                *dj = c;
            }
        }
        index = argmin_where(&d, |j| !chosen[j]).expect("k <= N leaves a candidate");
    }
    SelectionResult::build(dataset, stats, indices, true)
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa.sqrt() * bb.sqrt()).max(f64::MIN_POSITIVE)
}

#[derive(Clone, Copy, Debug)]
pub struct BaselineConfig {
    pub tau: f64,
    pub seed: u64,
    pub max_iters: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { tau: 0.85, seed: 0, max_iters: 10_000 }
    }
}

/// Random start, then repeatedly swaps the member with the largest
/// normalized inner product above `tau` for a random outsider.
pub fn select_innerproduct_baseline(dataset: &MetasurfaceDataset, k: usize, cfg: &BaselineConfig) -> Result<SelectionResult> {
    check_k(dataset, k)?;
    if !(cfg.tau > 0.0 && cfg.tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("tau must lie in (0, 1], got {}", cfg.tau)));
    }
    let stats = pearson_stats(dataset)?;
    let n = dataset.len();
    let mut r = rng::rng(cfg.seed);
    let mut members: Vec<usize> = sample(&mut r, n, k).into_vec();

    // Largest inner product of each member with the others.
    let worst = |members: &[usize]| -> Vec<f64> {
        members
            .iter()
            .enumerate()
            .map(|(a, &i)| {
                members
                    .iter()
                    .enumerate()
                    .filter(|&(b, _)| b != a)
                    .map(|(_, &j)| cosine(dataset.row(i), dataset.row(j)))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    };

    let mut best = (f64::INFINITY, members.clone());
    let mut converged = false;
    for _ in 0..=cfg.max_iters {
        let w = worst(&members);
        let peak = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if peak < best.0 {
            best = (peak, members.clone());
        }
        let Some(pos) = argmin_where(&w.iter().map(|v| -v).collect::<Vec<_>>(), |a| w[a] > cfg.tau) else {
            converged = true;
            break;
        };
        if k == n {
            break;
        }
        let outsider = loop {
            let c = r.gen_range(0..n);
            if !members.contains(&c) {
                break c;
            }
        };
        members[pos] = outsider;
    }
    let chosen = if converged { members } else { best.1 };
    SelectionResult::build(dataset, &stats, chosen, converged || k == n)
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

pub const BRUTE_FORCE_BUDGET: u128 = 1_000_000;

/// Exhaustive minimizer of the largest off-diagonal |p|; the
/// lexicographically first subset wins ties.
pub fn brute_force_oracle(dataset: &MetasurfaceDataset, k: usize) -> Result<SelectionResult> {
    check_k(dataset, k)?;
    let n = dataset.len();
    let subsets = binomial(n, k);
    if subsets > BRUTE_FORCE_BUDGET {
        return Err(Error::BudgetExceeded { subsets, budget: BRUTE_FORCE_BUDGET });
    }
    let stats = pearson_stats(dataset)?;
    let mut combo: Vec<usize> = (0..k).collect();
    let mut best = (f64::INFINITY, combo.clone());
    loop {
        let mut score = 0.0f64;
        'outer: for a in 0..k {
            for b in a + 1..k {
                score = score.max(stats.p.get(combo[a], combo[b]).abs());
                if score >= best.0 {
                    break 'outer;
                }
            }
        }
        if score < best.0 {
            best = (score, combo.clone());
        }
        // Next combination in lexicographic order.
        let Some(i) = (0..k).rev().find(|&i| combo[i] < n - k + i) else { break };
        combo[i] += 1;
        for j in i + 1..k {
            combo[j] = combo[j - 1] + 1;
        }
    }
    SelectionResult::build(dataset, &stats, best.1, true)
}

// ------------------------------------------------------------------ reports

fn csv_row<T: ToString>(cells: impl IntoIterator<Item = T>) -> String {
    cells.into_iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

/// Sibling of `path` holding the selected spectra.
pub fn spectra_csv_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}_spectra.csv"))
}

/// Writes the `k x k` |Pearson| matrix to `path` and the selected spectra to
/// [`spectra_csv_path`].
pub fn correlation_report(result: &SelectionResult, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "index,{}", csv_row(&result.indices)).map_err(io)?;
    for (a, &i) in result.indices.iter().enumerate() {
        writeln!(w, "{i},{}", csv_row(result.pairwise.row(a))).map_err(io)?;
    }
    w.flush().map_err(io)?;
    spectra::write_csv(&result.theta, &spectra_csv_path(path))
}

/// Reads a matrix written by [`correlation_report`].
pub fn read_correlation_csv(path: &Path) -> Result<(Vec<usize>, SquareMatrix)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(f).lines();
    let bad = |d: &str| Error::format(path, d.to_string());
    let header = lines.next().ok_or_else(|| bad("empty file"))?.map_err(|e| Error::io(path, e))?;
    let indices: Vec<usize> = header
        .split(',')
        .skip(1)
        .map(|c| c.trim().parse().map_err(|_| bad("bad index in header")))
        .collect::<Result<_>>()?;
    let k = indices.len();
    let mut data = Vec::with_capacity(k * k);
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        for cell in line.split(',').skip(1) {
            data.push(cell.trim().parse::<f64>().map_err(|_| bad("bad matrix entry"))?);
        }
    }
    Ok((indices, SquareMatrix::from_vec(k, data).map_err(|_| bad("matrix is not square"))?))
}

/// Saves the selected spectra as SPC1 and their dataset indices as
/// `<path>.indices.csv`.
pub fn save_selection(result: &SelectionResult, path: &Path) -> Result<()> {
    spectra::save(&result.theta, path)?;
    let ipath = indices_path(path);
    let io = |e| Error::io(&ipath, e);
    let mut w = BufWriter::new(File::create(&ipath).map_err(io)?);
    writeln!(w, "position,index").map_err(io)?;
    for (p, i) in result.indices.iter().enumerate() {
        writeln!(w, "{p},{i}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn indices_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".indices.csv");
    PathBuf::from(s)
}

/// Loads the selected spectra of a saved selection. The indices sidecar is
/// optional; without it rows are numbered from 0.
pub fn load_selection(path: &Path) -> Result<SelectionResult> {
    let theta = spectra::load(path)?;
    let ipath = indices_path(path);
    let indices = if ipath.exists() {
        let f = File::open(&ipath).map_err(|e| Error::io(&ipath, e))?;
        BufReader::new(f)
            .lines()
            .skip(1)
            .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
            .map(|l| {
                let l = l.map_err(|e| Error::io(&ipath, e))?;
                l.split(',').nth(1).and_then(|c| c.trim().parse().ok()).ok_or_else(|| Error::format(&ipath, "bad index row"))
            })
            .collect::<Result<Vec<usize>>>()?
    } else {
        (0..theta.len()).collect()
    };
    if indices.len() != theta.len() {
        return Err(Error::format(&ipath, format!("{} indices for {} spectra", indices.len(), theta.len())));
    }
    let stats = pearson_stats(&theta)?;
    let local: Vec<usize> = (0..theta.len()).collect();
    let mut r = SelectionResult::build(&theta, &stats, local, true)?;
    r.indices = indices;
    r.theta.provenance = spectra::Provenance::File(path.to_path_buf());
    Ok(r)
}
