use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use metahsi_ffi::*;

fn c(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> Option<String> {
    let p = mhsi_last_error_message();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

fn text(p: *const c_char) -> String {
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

/// Dataset -> selection -> mosaic -> encode -> reconstruct, handle by handle.
#[test]
fn pipeline_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(mhsi_dataset_generate(60, 8, 1, 0.5, 0.3, &mut ds), MhsiStatus::MhsiOk);
        assert!(last_error().is_none());
        let (mut n, mut bands) = (0, 0);
        assert_eq!(mhsi_dataset_shape(ds, &mut n, &mut bands), MhsiStatus::MhsiOk);
        assert_eq!((n, bands), (60, 8));

        let mut sel = ptr::null_mut();
        assert_eq!(mhsi_select_fps(ds, 4, true, &mut sel), MhsiStatus::MhsiOk);
        let mut idx = [0usize; 4];
        let (mut k, mut worst) = (0, 0.0);
        assert_eq!(mhsi_selection_info(sel, idx.as_mut_ptr(), 4, &mut k, &mut worst), MhsiStatus::MhsiOk);
        let direct = metahsi::selection::select_fps(&metahsi::spectra::generate_synthetic(&metahsi::spectra::GeneratorConfig {
            n: 60,
            bands: 8,
            seed: 1,
            constraints: metahsi::spectra::SpectrumConstraints { g_max: 0.5, r_min: 0.3 },
            ..Default::default()
        }).unwrap(), 4, true).unwrap();
        assert_eq!((k, idx.to_vec(), worst), (4, direct.indices.clone(), direct.max_offdiag));

        let sel_path = c(&dir.path().join("sel.spc"));
        assert_eq!(mhsi_selection_save(sel, sel_path.as_ptr()), MhsiStatus::MhsiOk);
        let mut sel2 = ptr::null_mut();
        assert_eq!(mhsi_selection_load(sel_path.as_ptr(), &mut sel2), MhsiStatus::MhsiOk);

        let mut phi = ptr::null_mut();
        assert_eq!(mhsi_filters_from_selection(sel2, 16, 16, 2, &mut phi), MhsiStatus::MhsiOk);
        let truth: Vec<f64> = (0..16 * 16 * 8).map(|i| 0.2 + 0.6 * ((i * 37 % 101) as f64 / 101.0)).collect();
        let mut x = ptr::null_mut();
        assert_eq!(mhsi_cube_new(16, 16, 8, truth.as_ptr(), &mut x), MhsiStatus::MhsiOk);
        let mut y = ptr::null_mut();
        assert_eq!(mhsi_encode(x, phi, 0.0, 3, &mut y), MhsiStatus::MhsiOk);

        let mut est = ptr::null_mut();
        assert_eq!(mhsi_reconstruct_classical(y, phi, 5, 0.1, 0.0, &mut est), MhsiStatus::MhsiOk);
        let (mut h, mut w, mut l) = (0, 0, 0);
        assert_eq!(mhsi_cube_dims(est, &mut h, &mut w, &mut l), MhsiStatus::MhsiOk);
        assert_eq!((h, w, l), (16, 16, 8));
        let mut buf = vec![0.0; h * w * l];
        assert_eq!(mhsi_cube_read(est, buf.as_mut_ptr(), buf.len()), MhsiStatus::MhsiOk);
        assert!(buf.iter().all(|v| v.is_finite()));

        let (mut p_same, mut s_same, mut p) = (0.0, 0.0, 0.0);
        assert_eq!(mhsi_psnr(x, x, 1.0, &mut p_same), MhsiStatus::MhsiOk);
        assert_eq!(mhsi_ssim(x, x, &mut s_same), MhsiStatus::MhsiOk);
        assert_eq!((p_same, s_same), (f64::INFINITY, 1.0));
        assert_eq!(mhsi_psnr(est, x, 1.0, &mut p), MhsiStatus::MhsiOk);
        assert!(p.is_finite() && p > 0.0);

        let cube_path = c(&dir.path().join("x.hsc"));
        let meas_path = c(&dir.path().join("y.msr"));
        assert_eq!(mhsi_cube_save(x, cube_path.as_ptr()), MhsiStatus::MhsiOk);
        assert_eq!(mhsi_measurement_save(y, meas_path.as_ptr()), MhsiStatus::MhsiOk);
        let (mut x2, mut y2) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(mhsi_cube_load(cube_path.as_ptr(), &mut x2), MhsiStatus::MhsiOk);
        assert_eq!(mhsi_measurement_load(meas_path.as_ptr(), &mut y2), MhsiStatus::MhsiOk);
        let mut back = vec![0.0; truth.len()];
        assert_eq!(mhsi_cube_read(x2, back.as_mut_ptr(), back.len()), MhsiStatus::MhsiOk);
        // HSC1 stores 32-bit samples.
        assert_eq!(back, truth.iter().map(|&v| v as f32 as f64).collect::<Vec<_>>());

        mhsi_cube_free(x2);
        mhsi_measurement_free(y2);
        mhsi_cube_free(est);
        mhsi_measurement_free(y);
        mhsi_cube_free(x);
        mhsi_filters_free(phi);
        mhsi_selection_free(sel2);
        mhsi_selection_free(sel);
        mhsi_dataset_free(ds);
    }
}

#[test]
fn model_checkpoint_round_trip() {
    use metahsi::erra::{ErraConfig, ErraModel};
    use metahsi::imaging::{encode, FilterArray, HyperCube};
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("m.erp");
    let model = ErraModel::<f32>::new(ErraConfig::new(4, 4, 2), 9).unwrap();
    model.save(&file).unwrap();
    let theta: Vec<f64> = (0..16).map(|i| 0.1 + i as f64 / 20.0).collect();
    let phi = FilterArray::new(theta.clone(), 4, 8, 8, 2).unwrap();
    let x = HyperCube::from_fn(8, 8, 4, |h, w, l| 0.3 + 0.05 * ((h + 2 * w + 3 * l) % 7) as f64).unwrap();
    let y = encode(&x, &phi, 0.0, 0).unwrap();
    let expected = model.reconstruct(&y, &phi).unwrap();

    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(mhsi_model_load(c(&file).as_ptr(), 4, 4, 2, 4, 8, true, &mut m), MhsiStatus::MhsiOk);
        let (mut xc, mut yc, mut phi_handle) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(mhsi_filters_new(theta.as_ptr(), 4, 8, 8, 2, &mut phi_handle), MhsiStatus::MhsiOk);
        assert_eq!(mhsi_cube_new(8, 8, 4, x.data().as_ptr(), &mut xc), MhsiStatus::MhsiOk);
        assert_eq!(mhsi_encode(xc, phi_handle, 0.0, 0, &mut yc), MhsiStatus::MhsiOk);
        let mut est = ptr::null_mut();
        assert_eq!(mhsi_model_reconstruct(m, yc, phi_handle, &mut est), MhsiStatus::MhsiOk);
        let mut buf = vec![0.0; 8 * 8 * 4];
        assert_eq!(mhsi_cube_read(est, buf.as_mut_ptr(), buf.len()), MhsiStatus::MhsiOk);
        assert_eq!(buf, expected.data());

        // A shape that disagrees with the checkpoint is a format error.
        let mut bad = ptr::null_mut();
        assert_eq!(mhsi_model_load(c(&file).as_ptr(), 4, 8, 2, 4, 8, true, &mut bad), MhsiStatus::MhsiFormat);
        assert!(bad.is_null());
        assert!(last_error().unwrap().contains("m.erp"));

        mhsi_cube_free(est);
        mhsi_filters_free(phi_handle);
        mhsi_measurement_free(yc);
        mhsi_cube_free(xc);
        mhsi_model_free(m);
    }
}

#[test]
fn failures_set_codes_and_messages() {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(mhsi_dataset_shape(ptr::null(), ptr::null_mut(), ptr::null_mut()), MhsiStatus::MhsiNullPointer);
        assert_eq!(last_error().as_deref(), Some("dataset is null"));
        assert_eq!(mhsi_dataset_load(ptr::null(), &mut ds), MhsiStatus::MhsiNullPointer);

        let missing = CString::new("/nonexistent/lib.spc").unwrap();
        assert_eq!(mhsi_dataset_load(missing.as_ptr(), &mut ds), MhsiStatus::MhsiIo);
        assert!(ds.is_null());
        assert!(last_error().unwrap().contains("/nonexistent/lib.spc"));

        assert_eq!(mhsi_dataset_generate(10, 8, 0, 0.5, 0.3, ptr::null_mut()), MhsiStatus::MhsiNullPointer);
        assert_eq!(mhsi_dataset_generate(10, 8, 0, 0.5, 0.3, &mut ds), MhsiStatus::MhsiOk);
        assert!(last_error().is_none());

        let mut sel = ptr::null_mut();
        assert_eq!(mhsi_select_fps(ds, 11, true, &mut sel), MhsiStatus::MhsiInvalidArgument);
        assert_eq!(mhsi_select_fps(ds, 3, true, &mut sel), MhsiStatus::MhsiOk);
        let mut small = [0usize; 2];
        let (mut k, mut worst) = (0, 0.0);
        assert_eq!(mhsi_selection_info(sel, small.as_mut_ptr(), 2, &mut k, &mut worst), MhsiStatus::MhsiInvalidArgument);
        assert_eq!(mhsi_selection_info(sel, ptr::null_mut(), 0, &mut k, &mut worst), MhsiStatus::MhsiOk);
        assert_eq!(k, 3);

        let mut phi = ptr::null_mut();
        assert_eq!(mhsi_filters_from_selection(sel, 7, 8, 2, &mut phi), MhsiStatus::MhsiShapeMismatch);
        assert_eq!(mhsi_filters_from_selection(sel, 8, 8, 2, &mut phi), MhsiStatus::MhsiShapeMismatch, "3 filters cannot fill a 2x2 tile");
        assert!(phi.is_null());

        let data = vec![0.5; 4 * 4 * 8];
        let mut x = ptr::null_mut();
        assert_eq!(mhsi_cube_new(4, 4, 8, ptr::null(), &mut x), MhsiStatus::MhsiNullPointer);
        assert_eq!(mhsi_cube_new(4, 4, 8, data.as_ptr(), &mut x), MhsiStatus::MhsiOk);
        let mut out = vec![0.0; 10];
        assert_eq!(mhsi_cube_read(x, out.as_mut_ptr(), out.len()), MhsiStatus::MhsiInvalidArgument);
        let mut v = 0.0;
        assert_eq!(mhsi_psnr(x, x, 0.0, &mut v), MhsiStatus::MhsiInvalidArgument);

        assert_eq!(text(mhsi_status_name(MhsiStatus::MhsiShapeMismatch)), "shape mismatch");
        assert_eq!(text(mhsi_version()), env!("CARGO_PKG_VERSION"));

        // Freeing NULL is a no-op.
        mhsi_cube_free(ptr::null_mut());
        mhsi_cube_free(x);
        mhsi_selection_free(sel);
        mhsi_dataset_free(ds);
    }
}

#[test]
fn errors_are_thread_local() {
    let missing = CString::new("/nonexistent/a.hsc").unwrap();
    let mut x = ptr::null_mut();
    assert_eq!(unsafe { mhsi_cube_load(missing.as_ptr(), &mut x) }, MhsiStatus::MhsiIo);
    std::thread::spawn(|| assert!(last_error().is_none())).join().unwrap();
    assert!(last_error().is_some());
}

fn target_dir() -> PathBuf {
    // tests live in <target>/<profile>/deps/
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_header() {
    let lib = target_dir().join("libmetahsi_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "metahsi.h"
int main(void) {
    MhsiDataset *ds = NULL;
    if (mhsi_dataset_generate(40, 8, 2, 0.5, 0.3, &ds) != MHSI_OK) return 1;
    MhsiSelection *sel = NULL;
    if (mhsi_select_fps(ds, 4, true, &sel) != MHSI_OK) return 2;
    size_t idx[4], k = 0; double worst = 0;
    if (mhsi_selection_info(sel, idx, 4, &k, &worst) != MHSI_OK || k != 4) return 3;
    MhsiDataset *missing = NULL;
    if (mhsi_dataset_load("/nonexistent.spc", &missing) != MHSI_IO || missing) return 4;
    if (!strstr(mhsi_last_error_message(), "nonexistent")) return 5;
    printf("%zu %zu %zu %zu %.6f\n", idx[0], idx[1], idx[2], idx[3], worst);
    mhsi_selection_free(sel);
    mhsi_dataset_free(ds);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let expected = metahsi::selection::select_fps(
        &metahsi::spectra::generate_synthetic(&metahsi::spectra::GeneratorConfig {
            n: 40,
            bands: 8,
            seed: 2,
            constraints: metahsi::spectra::SpectrumConstraints { g_max: 0.5, r_min: 0.3 },
            ..Default::default()
        })
        .unwrap(),
        4,
        true,
    )
    .unwrap();
    let line = String::from_utf8(out.stdout).unwrap();
    let got: Vec<usize> = line.split_whitespace().take(4).map(|v| v.parse().unwrap()).collect();
    assert_eq!(got, expected.indices);
}
