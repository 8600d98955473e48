mod common;

use metahsi::selection::*;
use metahsi::spectra::{generate_synthetic, uniform_grid, GeneratorConfig, MetasurfaceDataset};
use metahsi::Error;
use proptest::prelude::*;

fn dataset(n: usize, seed: u64) -> MetasurfaceDataset {
    generate_synthetic(&GeneratorConfig { n, seed, bands: 120, ..Default::default() }).unwrap()
}

#[test]
fn single_pick_is_lowest_mean_correlation() {
    let ds = dataset(15, 3);
    let r = select_fps(&ds, 1, true).unwrap();
    let rows = common::dataset_rows(&ds);
    assert_eq!(r.indices, common::reference_fps(&rows, 1, true));
    assert_eq!(r.max_offdiag, 0.0);
}

#[test]
fn correlated_family_and_orthogonal_row() {
    // p(u, 2u + 1) = 1 and p(u, w) = 0 by construction.
    let u = vec![1.0, 2.0, 3.0, 4.0];
    let v: Vec<f64> = u.iter().map(|x| 2.0 * x + 1.0).collect();
    let w = vec![1.0, -1.0, -1.0, 1.0];
    let ds = MetasurfaceDataset::from_rows(uniform_grid(1000.0, 2500.0, 4).unwrap(), &[u, v, w]).unwrap();
    let r = select_fps(&ds, 2, true).unwrap();
    // w has the lowest mean |p| and seeds; the tie between u and 2u + 1 goes to the smaller index.
    assert_eq!(r.indices, vec![2, 0]);
    assert!(r.max_offdiag < 1e-6);
    let all = select_fps(&ds, 3, true).unwrap();
    assert!((all.max_offdiag - 1.0).abs() < 1e-6);
}

#[test]
fn matches_reference_trace() {
    for seed in 0..20 {
        let ds = dataset(12, 500 + seed);
        let rows = common::dataset_rows(&ds);
        for use_abs in [true, false] {
            let r = select_fps(&ds, 4, use_abs).unwrap();
            assert_eq!(r.indices, common::reference_fps(&rows, 4, use_abs), "seed {seed}, abs {use_abs}");
        }
    }
}

#[test]
fn result_invariants() {
    let ds = dataset(30, 4);
    let r = select_fps(&ds, 9, true).unwrap();
    let mut sorted = r.indices.clone();
    sorted.sort_unstable();
    sorted.dedup();
    assert_eq!(sorted.len(), 9);
    for (pos, &i) in r.indices.iter().enumerate() {
        assert_eq!(r.theta.row(pos), ds.row(i));
    }
    let mut m = 0.0f64;
    for a in 0..9 {
        assert!((r.pairwise.get(a, a) - 1.0).abs() < 1e-9);
        for b in 0..9 {
            assert_eq!(r.pairwise.get(a, b), r.pairwise.get(b, a));
            if a != b {
                m = m.max(r.pairwise.get(a, b));
            }
        }
    }
    assert_eq!(r.max_offdiag, m);
}

#[test]
fn rejects_oversized_k() {
    let ds = dataset(5, 1);
    assert!(matches!(select_fps(&ds, 6, true), Err(Error::InvalidArgument(_))));
    assert!(select_innerproduct_baseline(&ds, 6, &BaselineConfig::default()).is_err());
    assert!(brute_force_oracle(&ds, 6).is_err());
}

#[test]
fn baseline_edge_cases() {
    let ds = dataset(20, 6);
    // With tau = 1 no pair exceeds the threshold, so the initial draw stands.
    let cfg = BaselineConfig { tau: 1.0, seed: 77, max_iters: 100 };
    let a = select_innerproduct_baseline(&ds, 5, &cfg).unwrap();
    let mut r = metahsi::rng::rng(77);
    let initial = rand::seq::index::sample(&mut r, 20, 5).into_vec();
    assert_eq!(a.indices, initial);
    assert!(a.converged);

    let all = select_innerproduct_baseline(&ds, 20, &BaselineConfig { tau: 0.5, seed: 1, max_iters: 100 }).unwrap();
    let mut idx = all.indices.clone();
    idx.sort_unstable();
    assert_eq!(idx, (0..20).collect::<Vec<_>>());

    assert!(select_innerproduct_baseline(&ds, 5, &BaselineConfig { tau: 0.0, ..cfg }).is_err());
    // An unreachable threshold reports non-convergence with the best set found.
    let stuck = select_innerproduct_baseline(&ds, 5, &BaselineConfig { tau: 1e-6, seed: 3, max_iters: 30 }).unwrap();
    assert!(!stuck.converged);
    assert_eq!(stuck.k(), 5);
}

#[test]
fn oracle_cases() {
    let ds = dataset(6, 9);
    let one = brute_force_oracle(&ds, 1).unwrap();
    assert_eq!(one.indices, vec![0]);
    assert_eq!(one.max_offdiag, 0.0);

    // Row 2 is orthogonal to row 0 and only weakly correlated with row 1,
    // which nearly duplicates row 0: {0, 2} is the unique best pair.
    let rows = vec![vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 4.0, 6.0, 9.0], vec![1.0, -1.0, -1.0, 1.0]];
    let ds3 = MetasurfaceDataset::from_rows(uniform_grid(1000.0, 2500.0, 4).unwrap(), &rows).unwrap();
    assert_eq!(brute_force_oracle(&ds3, 2).unwrap().indices, vec![0, 2]);

    let big = dataset(60, 2);
    assert!(matches!(brute_force_oracle(&big, 5), Err(Error::BudgetExceeded { .. })));
}

#[test]
fn oracle_bounds_fps() {
    for seed in 0..10 {
        let ds = dataset(10, 900 + seed);
        let fps = select_fps(&ds, 3, true).unwrap();
        let opt = brute_force_oracle(&ds, 3).unwrap();
        assert!(opt.max_offdiag <= fps.max_offdiag + 1e-15, "seed {seed}");
    }
}

#[test]
fn correlation_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corr.csv");
    let r = select_fps(&dataset(25, 5), 4, true).unwrap();
    correlation_report(&r, &path).unwrap();
    let (indices, m) = read_correlation_csv(&path).unwrap();
    assert_eq!(indices, r.indices);
    for a in 0..4 {
        assert!((m.get(a, a) - 1.0).abs() < 1e-6);
        for b in 0..4 {
            assert_eq!(m.get(a, b), m.get(b, a));
            assert!((m.get(a, b) - r.pairwise.get(a, b)).abs() < 1e-6);
        }
    }
    let spectra_csv = std::fs::read_to_string(spectra_csv_path(&path)).unwrap();
    assert_eq!(spectra_csv.lines().count(), 5);
}

#[test]
fn selection_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sel.spc");
    let r = select_fps(&dataset(25, 5), 4, true).unwrap();
    save_selection(&r, &path).unwrap();
    let back = load_selection(&path).unwrap();
    assert_eq!(back.indices, r.indices);
    assert_eq!(back.theta.values(), r.theta.values());
    assert!((back.max_offdiag - r.max_offdiag).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fps_is_invariant_under_affine_row_rescaling(seed in 0u64..1000, target in 0usize..12, scale in 0.5f64..3.0, shift in -0.5f64..0.5) {
        let ds = dataset(12, seed);
        let mut rows = common::dataset_rows(&ds);
        // Rescaled rows may leave [0, 1]; correlation does not care.
        rows[target] = rows[target].iter().map(|v| scale * v + shift).collect();
        let moved = MetasurfaceDataset::from_rows(ds.grid().to_vec(), &rows).unwrap();
        prop_assert_eq!(select_fps(&ds, 4, true).unwrap().indices, select_fps(&moved, 4, true).unwrap().indices);
    }

    #[test]
    fn fps_never_repeats_an_index(seed in 0u64..1000, k in 1usize..15) {
        let ds = dataset(15, seed);
        let r = select_fps(&ds, k, true).unwrap();
        let mut idx = r.indices.clone();
        idx.sort_unstable();
        idx.dedup();
        prop_assert_eq!(idx.len(), k);
    }
}
