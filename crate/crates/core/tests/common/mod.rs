#![allow(dead_code)]

use metahsi::rng;
use metahsi::tensor::{Graph, Tensor, Var};
use rand::Rng as _;

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut r = rng::rng(seed);
    Tensor::from_fn(shape, |_| r.gen_range(lo..hi))
}

pub fn normal(shape: &[usize], seed: u64) -> Tensor<f64> {
    uniform(shape, -1.0, 1.0, seed)
}

/// `sum(x ⊙ w)` for a fixed random `w`, so every output entry gets a
/// distinct upstream gradient.
pub fn probe(g: &mut Graph<f64>, x: Var, seed: u64) -> metahsi::Result<Var> {
    let w = normal(g.shape(x), seed ^ 0xDEAD_BEEF);
    let w = g.input(w);
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len(), "length mismatch");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "entry {i}: {x} vs {y} (tol {tol})");
    }
}

/// Straight-line greedy selection written from the algorithm description:
/// Pearson matrix, seed by smallest mean |p|, then repeated mask updates
/// and argmin over the unselected rows.
pub fn reference_fps(rows: &[Vec<f64>], k: usize, use_abs: bool) -> Vec<usize> {
    let n = rows.len();
    let lam = rows[0].len() as f64;
    let mut p = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mi = rows[i].iter().sum::<f64>() / lam;
            let mj = rows[j].iter().sum::<f64>() / lam;
            let mut cov = 0.0;
            let mut vi = 0.0;
            let mut vj = 0.0;
            for t in 0..rows[i].len() {
                cov += (rows[i][t] - mi) * (rows[j][t] - mj);
                vi += (rows[i][t] - mi) * (rows[i][t] - mi);
                vj += (rows[j][t] - mj) * (rows[j][t] - mj);
            }
            p[i][j] = (cov / lam) / ((vi / lam).sqrt() * (vj / lam).sqrt());
        }
    }
    let mut seed = 0;
    let mut best = f64::INFINITY;
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            if j != i {
                s += p[i][j].abs();
            }
        }
        let m = if n > 1 { s / (n - 1) as f64 } else { 0.0 };
        if m < best {
            best = m;
            seed = i;
        }
    }
    let mut d = vec![f64::NEG_INFINITY; n];
    let mut out = vec![seed];
    let mut index = seed;
    while out.len() < k {
        for j in 0..n {
            let c = if use_abs { p[index][j].abs() } else { p[index][j] };
            if c > d[j] {
                d[j] = c;
            }
        }
        let mut next = usize::MAX;
        for j in 0..n {
            if !out.contains(&j) && (next == usize::MAX || d[j] < d[next]) {
                next = j;
            }
        }
        out.push(next);
        index = next;
    }
    out
}

pub fn dataset_rows(ds: &metahsi::spectra::MetasurfaceDataset) -> Vec<Vec<f64>> {
    ds.rows().map(|r| r.iter().map(|&v| v as f64).collect()).collect()
}

pub fn random_cube(h: usize, w: usize, l: usize, seed: u64) -> metahsi::imaging::HyperCube {
    let t = uniform(&[h, w, l], 0.0, 1.0, seed);
    metahsi::imaging::HyperCube::new(h, w, l, t.into_data()).unwrap()
}

/// Random `s x s` filter array with transmittances in `[0, 1]`.
pub fn random_filters(h: usize, w: usize, l: usize, s: usize, seed: u64) -> metahsi::imaging::FilterArray {
    let theta = uniform(&[s * s * l], 0.0, 1.0, seed).into_data();
    metahsi::imaging::FilterArray::new(theta, l, h, w, s).unwrap()
}

/// `y[h][w] = Σ_λ θ[(h mod s) s + (w mod s)][λ] x[h][w][λ]` by explicit loops.
pub fn loop_encode(x: &metahsi::imaging::HyperCube, theta: &[f64], s: usize) -> Vec<f64> {
    let (h, w, l) = x.dims();
    let mut y = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let tile = (i % s) * s + (j % s);
            for k in 0..l {
                y[i * w + j] += theta[tile * l + k] * x.get(i, j, k);
            }
        }
    }
    y
}

pub fn reference_psnr(a: &[f64], b: &[f64]) -> f64 {
    let mut se = 0.0;
    for i in 0..a.len() {
        se += (a[i] - b[i]).powi(2);
    }
    10.0 * (1.0 / (se / a.len() as f64)).log10()
}

/// Mean SSIM of one plane by direct 2-D weighted sums over every valid
/// 11x11 window.
pub fn reference_ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (u, row) in win.iter_mut().enumerate() {
        for (v, cell) in row.iter_mut().enumerate() {
            let (du, dv) = (u as f64 - 5.0, v as f64 - 5.0);
            *cell = (-(du * du + dv * dv) / (2.0 * 1.5 * 1.5)).exp();
            total += *cell;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for y in 0..=h - 11 {
        for x in 0..=w - 11 {
            let (mut ma, mut mb) = (0.0, 0.0);
            for u in 0..11 {
                for v in 0..11 {
                    let g = win[u][v] / total;
                    ma += g * a[(y + u) * w + x + v];
                    mb += g * b[(y + u) * w + x + v];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for u in 0..11 {
                for v in 0..11 {
                    let g = win[u][v] / total;
                    let (da, db) = (a[(y + u) * w + x + v] - ma, b[(y + u) * w + x + v] - mb);
                    va += g * da * da;
                    vb += g * db * db;
                    cov += g * da * db;
                }
            }
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}
