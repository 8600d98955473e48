use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use metahsi::cli::{self, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
use metahsi::manifest::{manifest_path, RunManifest};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_metahsi"))
}

fn run(args: &[&str]) -> i32 {
    cli::run(std::iter::once("metahsi").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn magic(p: &Path) -> [u8; 4] {
    let b = fs::read(p).unwrap();
    [b[0], b[1], b[2], b[3]]
}

#[test]
fn usage_and_error_exit_codes() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gen-spectra"));

    let out = bin().args(["gen-spectra", "--bogus", "1", "--out", "x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bogus"));

    let out = bin().args(["select-filters", "--in", "/nonexistent/spectra.spc", "--k", "4", "--out", "/tmp/x.spc"]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_FAILURE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/spectra.spc"));

    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(EXIT_OK));
    assert_eq!(run(&["replay"]), EXIT_USAGE);
    assert_eq!(run(&["reconstruct", "--measurement", "m", "--filters", "f", "--out", "o"]), EXIT_USAGE);
}

struct Pipeline {
    dir: tempfile::TempDir,
}

impl Pipeline {
    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

/// Spectra, selection, scenes and measurements at toy scale.
fn front_half(threads: &str) -> Pipeline {
    let pl = Pipeline { dir: tempfile::tempdir().unwrap() };
    let (spc, sel, scenes, meas) = (pl.p("spectra.spc"), pl.p("sel.spc"), pl.p("scenes"), pl.p("meas"));
    assert_eq!(run(&["gen-spectra", "--n", "200", "--bands", "8", "--gmax", "0.5", "--seed", "3", "--out", s(&spc), "--threads", threads]), 0);
    assert_eq!(run(&["select-filters", "--in", s(&spc), "--k", "16", "--out", s(&sel), "--threads", threads]), 0);
    assert_eq!(run(&["gen-scenes", "--n", "3", "--seed", "4", "--out", s(&scenes), "--threads", threads]), 0);
    assert_eq!(run(&["encode", "--scene", s(&scenes), "--filters", s(&sel), "--sigma", "0.01", "--seed", "5", "--out", s(&meas), "--threads", threads]), 0);
    pl
}

#[test]
fn toy_pipeline_emits_every_artifact() {
    let pl = front_half("0");
    let (sel, scenes, meas) = (pl.p("sel.spc"), pl.p("scenes"), pl.p("meas"));
    assert_eq!(magic(&pl.p("spectra.spc")), *b"SPC1");
    assert_eq!(metahsi::spectra::load(&pl.p("spectra.spc")).unwrap().len(), 200);
    assert_eq!(metahsi::selection::load_selection(&sel).unwrap().k(), 16);
    assert!(pl.p("sel.csv").exists());
    assert_eq!(magic(&scenes.join("scene_002.hsc")), *b"HSC1");
    assert_eq!(magic(&meas.join("scene_000.msr")), *b"MSR1");

    let model = pl.p("model.erp");
    let train = ["train", "--scenes", s(&scenes), "--filters", s(&sel), "--stages", "3", "--channels", "4", "--epochs", "2", "--crop", "16", "--seed", "1", "--out", s(&model)];
    assert_eq!(run(&train), 0);
    assert_eq!(magic(&model), *b"ERP1");
    assert_eq!(fs::read_to_string(pl.p("model.loss.csv")).unwrap().lines().count(), 3);

    let recon = pl.p("recon");
    let rec = ["reconstruct", "--measurement", s(&meas), "--filters", s(&sel), "--model", s(&model), "--stages", "3", "--channels", "4", "--truth", s(&scenes), "--out", s(&recon)];
    assert_eq!(run(&rec), 0);
    let x = metahsi::imaging::load_cube(&recon.join("scene_001.hsc")).unwrap();
    assert_eq!(x.dims(), (32, 32, 8));
    let stages = fs::read_to_string(recon.join("scene_001.stages.csv")).unwrap();
    assert_eq!(stages.lines().next(), Some("stage,fidelity,psnr_db,ssim"));
    assert_eq!(stages.lines().count(), 5);

    let classical = pl.p("classical.hsc");
    let m0 = meas.join("scene_000.msr");
    assert_eq!(run(&["reconstruct", "--measurement", s(&m0), "--filters", s(&sel), "--classical", "--stages", "4", "--out", s(&classical)]), 0);
    assert_eq!(magic(&classical), *b"HSC1");

    let quality = pl.p("quality.csv");
    assert_eq!(run(&["evaluate", "--recon", s(&recon), "--truth", s(&scenes), "--out", s(&quality)]), 0);
    let q = metahsi::metrics::read_report(&quality).unwrap();
    assert_eq!(q.per_scene.len(), 3);
    assert!(q.avg_psnr_db > 10.0);

    let plots = pl.p("plots");
    assert_eq!(run(&["export-plots", "--in", pl.dir.path().to_str().unwrap(), "--out", s(&plots)]), 0);
    for f in ["spectra_spectra.csv", "correlation_sel.csv", "loss_model.csv", "quality_quality.csv"] {
        assert!(plots.join(f).exists(), "{f}");
    }
    assert_eq!(run(&["export-plots", "--in", s(&recon), "--out", s(&plots)]), 0);
    assert!(plots.join("stages_scene_000.csv").exists());

    for artifact in [pl.p("spectra.spc"), sel, scenes, meas, model, recon, quality, plots] {
        let m = RunManifest::load(&manifest_path(&artifact)).unwrap();
        assert!(m.command().is_some(), "{}", artifact.display());
        assert_eq!(m.get("tool_version"), Some(env!("CARGO_PKG_VERSION")));
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("a.spc");
    fs::write(&cfg, format!("# toy\nn=7\nbands=8\ngmax=0.5\nseed=1\nout={}\n", out.display())).unwrap();
    assert_eq!(run(&["gen-spectra", "--config", s(&cfg), "--n", "5"]), 0);
    assert_eq!(metahsi::spectra::load(&out).unwrap().len(), 5);
    let m = RunManifest::load(&manifest_path(&out)).unwrap();
    assert_eq!((m.get("n"), m.get("seed"), m.get("gmax")), (Some("5"), Some("1"), Some("0.5")));
    assert_eq!(run(&["gen-spectra", "--config", "/nonexistent.cfg"]), EXIT_FAILURE);
}

#[test]
fn replayed_manifests_are_byte_identical() {
    let pl = front_half("1");
    let mut artifacts: Vec<PathBuf> = vec![pl.p("spectra.spc"), pl.p("sel.spc"), pl.p("sel.csv"), pl.p("sel_spectra.csv")];
    artifacts.extend(["scene_000.msr", "scene_001.msr", "scene_002.msr"].iter().map(|f| pl.p("meas").join(f)));
    let before: Vec<Vec<u8>> = artifacts.iter().map(|p| fs::read(p).unwrap()).collect();
    for a in ["spectra.spc", "sel.spc", "scenes", "meas"] {
        assert_eq!(run(&["replay", s(&manifest_path(&pl.p(a)))]), 0, "{a}");
    }
    for (p, b) in artifacts.iter().zip(&before) {
        assert_eq!(&fs::read(p).unwrap(), b, "{}", p.display());
    }
    // Overrides on replay redirect the output.
    let other = pl.p("other.spc");
    assert_eq!(run(&["replay", s(&manifest_path(&pl.p("spectra.spc"))), "--out", s(&other)]), 0);
    assert_eq!(fs::read(&other).unwrap(), before[0]);
}
