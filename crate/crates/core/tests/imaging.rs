mod common;

use common::{loop_encode, random_cube, random_filters};
use metahsi::imaging::*;
use metahsi::metrics::psnr;
use metahsi::selection::select_fps;
use metahsi::spectra::{generate_synthetic, GeneratorConfig, SpectrumConstraints};
use metahsi::tensor::Tensor;
use metahsi::Error;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn selection(k: usize, seed: u64) -> metahsi::selection::SelectionResult {
    let cfg = GeneratorConfig { n: 40, seed, bands: 8, constraints: SpectrumConstraints { g_max: 0.5, r_min: 0.3 }, ..Default::default() };
    select_fps(&generate_synthetic(&cfg).unwrap(), k, true).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn period_one_is_spatially_constant() {
    let sel = selection(1, 1);
    let phi = build_mosaic(&sel, 4, 6, 1).unwrap();
    let m = phi.mosaic();
    let expected: Vec<f64> = sel.theta.row(0).iter().map(|&v| v as f64).collect();
    for h in 0..4 {
        for w in 0..6 {
            assert_eq!(m.pixel(h, w), &expected[..]);
        }
    }
}

#[test]
fn mosaic_is_periodic_and_balanced() {
    let sel = selection(9, 2);
    let phi = build_mosaic(&sel, 6, 6, 3).unwrap();
    let m = phi.mosaic();
    for h in 0..3 {
        for w in 0..6 {
            assert_eq!(m.pixel(h, w), m.pixel(h + 3, w));
            assert_eq!(m.pixel(w, h), m.pixel(w, h + 3));
        }
    }
    // Every selected spectrum covers exactly 36 / 9 pixels.
    for r in 0..9 {
        let row: Vec<f64> = sel.theta.row(r).iter().map(|&v| v as f64).collect();
        let count = (0..6).flat_map(|h| (0..6).map(move |w| (h, w))).filter(|&(h, w)| m.pixel(h, w) == &row[..]).count();
        assert_eq!(count, 4, "spectrum {r}");
    }
}

#[test]
fn mosaic_preconditions() {
    let sel = selection(9, 3);
    assert!(matches!(build_mosaic(&sel, 6, 6, 2), Err(Error::ShapeMismatch { .. })));
    assert!(matches!(build_mosaic(&sel, 6, 7, 3), Err(Error::ShapeMismatch { .. })));
    assert!(FilterArray::new(vec![1.5; 4], 1, 2, 2, 2).is_err());
}

#[test]
fn encode_sums_over_bands() {
    let x = HyperCube::from_fn(4, 4, 5, |_, _, _| 1.0).unwrap();
    let phi = FilterArray::new(vec![1.0; 5], 5, 4, 4, 1).unwrap();
    let y = encode(&x, &phi, 0.0, 0).unwrap();
    assert!(y.y.iter().all(|&v| v == 5.0));
}

#[test]
fn zero_scene_gives_pure_noise() {
    let phi = random_filters(4, 6, 3, 2, 5);
    let y = encode(&HyperCube::zeros(4, 6, 3), &phi, 0.3, 42).unwrap();
    let mut r = metahsi::rng::rng(42);
    let expected: Vec<f64> = (0..24)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            0.3 * z
        })
        .collect();
    assert_eq!(y.y, expected);
    assert_eq!((y.noise_sigma, y.seed), (0.3, 42));
}

#[test]
fn encode_matches_loop_oracle() {
    let x = random_cube(12, 12, 8, 11);
    let phi = random_filters(12, 12, 8, 3, 12);
    let y = encode(&x, &phi, 0.0, 0).unwrap();
    common::assert_close(&y.y, &loop_encode(&x, phi.theta(), 3), 1e-6);
}

#[test]
fn encode_rejects_mismatches() {
    let phi = random_filters(4, 4, 3, 2, 1);
    assert!(matches!(encode(&random_cube(4, 4, 5, 1), &phi, 0.0, 0), Err(Error::ShapeMismatch { .. })));
    assert!(encode(&random_cube(6, 4, 3, 1), &phi, 0.0, 0).is_err());
    assert!(encode(&random_cube(4, 4, 3, 1), &phi, -1.0, 0).is_err());
}

#[test]
fn adjoint_trivial_cases() {
    let phi = random_filters(4, 4, 3, 2, 2);
    let zero = Measurement::new(4, 4, vec![0.0; 16], 0.0, 0).unwrap();
    assert!(adjoint(&zero, &phi).unwrap().data().iter().all(|&v| v == 0.0));

    let ones = FilterArray::new(vec![1.0; 3], 3, 4, 4, 1).unwrap();
    let y = Measurement::new(4, 4, (0..16).map(|v| v as f64).collect(), 0.0, 0).unwrap();
    let a = adjoint(&y, &ones).unwrap();
    for h in 0..4 {
        for w in 0..4 {
            assert!(a.pixel(h, w).iter().all(|&v| v == (h * 4 + w) as f64));
        }
    }
    assert!(adjoint(&Measurement::new(2, 2, vec![0.0; 4], 0.0, 0).unwrap(), &phi).is_err());
}

#[test]
fn adjoint_identity_on_random_triples() {
    for seed in 0..100 {
        let phi = random_filters(8, 8, 6, 2, 3 * seed);
        let x = random_cube(8, 8, 6, 3 * seed + 1);
        let yv = common::uniform(&[64], -1.0, 1.0, 3 * seed + 2).into_data();
        let y = Measurement::new(8, 8, yv.clone(), 0.0, 0).unwrap();
        let lhs = dot(&encode(&x, &phi, 0.0, 0).unwrap().y, &yv);
        let rhs = dot(x.data(), adjoint(&y, &phi).unwrap().data());
        assert!((lhs - rhs).abs() < 1e-10, "seed {seed}: {lhs} vs {rhs}");
    }
}

#[test]
fn init_estimate_cases() {
    // One active band per pixel: the estimate inverts a noiseless reading there.
    let s = 2;
    let bands = 4;
    let mut theta = vec![0.0; s * s * bands];
    for t in 0..4 {
        theta[t * bands + t] = 0.5 + 0.1 * t as f64;
    }
    let phi = FilterArray::new(theta, bands, 4, 4, s).unwrap();
    let x = random_cube(4, 4, bands, 8);
    let y = encode(&x, &phi, 0.0, 0).unwrap();
    let x0 = init_estimate(&y, &phi).unwrap();
    for h in 0..4 {
        for w in 0..4 {
            let band = (h % 2) * 2 + w % 2;
            assert!((x0.get(h, w, band) - x.get(h, w, band)).abs() < 1e-12);
            for l in (0..bands).filter(|&l| l != band) {
                assert_eq!(x0.get(h, w, l), 0.0);
            }
        }
    }
    let zero = Measurement::new(4, 4, vec![0.0; 16], 0.0, 0).unwrap();
    assert!(init_estimate(&zero, &phi).unwrap().data().iter().all(|&v| v == 0.0));
    // All-zero filters hit the energy floor instead of dividing by zero.
    let dark = FilterArray::new(vec![0.0; 4], 4, 4, 4, 1).unwrap();
    assert!(init_estimate(&y, &dark).unwrap().data().iter().all(|v| v.is_finite()));
}

#[test]
fn flat_spectrum_scene_baseline() {
    let phi = build_mosaic(&selection(9, 4), 12, 12, 3).unwrap();
    let x = HyperCube::from_fn(12, 12, 8, |h, w, _| 0.2 + 0.05 * ((h + w) % 3) as f64).unwrap();
    let y = encode(&x, &phi, 0.0, 0).unwrap();
    let x0 = init_estimate(&y, &phi).unwrap();
    let p = psnr(&x0, &x, 1.0).unwrap();
    // Minimum-norm estimate of a flat spectrum follows the filter shape.
    let mut se = 0.0;
    for h in 0..12 {
        for w in 0..12 {
            let t = phi.pixel_filter(h, w);
            let e: f64 = t.iter().map(|v| v * v).sum();
            let yv: f64 = t.iter().sum::<f64>() * x.get(h, w, 0);
            for l in 0..8 {
                se += (t[l] * yv / e - x.get(h, w, l)).powi(2);
            }
        }
    }
    let expected = 10.0 * (1.0 / (se / (12.0 * 12.0 * 8.0))).log10();
    assert!((p - expected).abs() < 1e-9);
    println!("flat-spectrum init PSNR: {p:.3} dB");
}

#[test]
fn noise_is_seed_deterministic() {
    let phi = random_filters(4, 4, 3, 2, 1);
    let x = random_cube(4, 4, 3, 2);
    let a = encode(&x, &phi, 0.1, 9).unwrap();
    assert_eq!(a, encode(&x, &phi, 0.1, 9).unwrap());
    assert_ne!(a.y, encode(&x, &phi, 0.1, 10).unwrap().y);
}

#[test]
fn tensor_layout_round_trip() {
    let x = random_cube(4, 6, 3, 5);
    let t: Tensor<f64> = x.to_tensor();
    assert_eq!(t.shape(), &[3, 4, 6]);
    assert_eq!(t.get(&[2, 1, 5]), x.get(1, 5, 2));
    assert_eq!(HyperCube::from_tensor(&t).unwrap(), x);
}

#[test]
fn cube_and_measurement_files() {
    let dir = tempfile::tempdir().unwrap();
    let cp = dir.path().join("x.hsc");
    let x = random_cube(4, 8, 3, 6);
    save_cube(&x, &cp).unwrap();
    assert_eq!(load_cube(&cp).unwrap(), x.quantized());
    let bytes = std::fs::read(&cp).unwrap();
    assert_eq!(&bytes[..4], b"HSC1");
    assert_eq!(bytes.len(), 16 + 4 * 96);

    let mp = dir.path().join("y.msr");
    let y = encode(&x, &random_filters(4, 8, 3, 2, 7), 0.05, 77).unwrap();
    save_measurement(&y, &mp).unwrap();
    let back = load_measurement(&mp).unwrap();
    assert_eq!(back.y, y.y.iter().map(|&v| v as f32 as f64).collect::<Vec<_>>());
    assert_eq!((back.noise_sigma as f32, back.seed), (0.05f32, 77));

    let bad = dir.path().join("bad");
    std::fs::write(&bad, b"MSR1\x01\x00").unwrap();
    assert!(matches!(load_measurement(&bad), Err(Error::Format { .. })));
    let mut extra = bytes.clone();
    extra.push(0);
    std::fs::write(&bad, &extra).unwrap();
    assert!(matches!(load_cube(&bad), Err(Error::Format { .. })));
    std::fs::write(&bad, std::fs::read(&mp).unwrap()).unwrap();
    assert!(matches!(load_cube(&bad), Err(Error::Format { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn encode_is_linear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let phi = random_filters(6, 6, 4, 3, seed);
        let (x1, x2) = (random_cube(6, 6, 4, seed + 1), random_cube(6, 6, 4, seed + 2));
        let mix = HyperCube::new(6, 6, 4, x1.data().iter().zip(x2.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let y = encode(&mix, &phi, 0.0, 0).unwrap();
        let (y1, y2) = (encode(&x1, &phi, 0.0, 0).unwrap(), encode(&x2, &phi, 0.0, 0).unwrap());
        for i in 0..36 {
            prop_assert!((y.y[i] - (a * y1.y[i] + b * y2.y[i])).abs() < 1e-6);
        }
    }
}
