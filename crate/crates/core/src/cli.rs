//! Command-line front end. Every command writes a `key=value` manifest next
//! to its primary output; `replay` reruns a manifest, and `--config` merges a
//! file of the same format under the command-line flags.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::erra::{ErraConfig, ErraModel, NetShape};
use crate::error::{Error, Result};
use crate::imaging::{self, build_mosaic, FilterArray, HyperCube};
use crate::manifest::{manifest_path, RunManifest};
use crate::metrics;
use crate::recon::{self, ProxKind, TrainConfig, UnfoldingConfig};
use crate::scenes::{self, SceneConfig};
use crate::selection::{self, BaselineConfig, SelectionResult};
use crate::spectra::{self, GeneratorConfig, SpectrumConstraints};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const SCENE_EXT: &str = "hsc";
const MEASUREMENT_EXT: &str = "msr";

#[derive(Parser, Debug)]
#[command(name = "metahsi", version, about = "Metasurface filter selection, snapshot encoding and deep-unfolding reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Worker threads for parallel kernels; 0 uses every core.
    #[arg(long, default_value_t = 0, global = true)]
    threads: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic transmission spectra (SPC1).
    GenSpectra(GenSpectra),
    /// Select k filters from a spectra file (SPC1 + correlation CSV).
    SelectFilters(SelectFilters),
    /// Generate synthetic hyperspectral scenes into a directory (HSC1 files).
    GenScenes(GenScenes),
    /// Encode a scene, or a directory of scenes, through the filter mosaic (MSR1).
    Encode(Encode),
    /// Train an unfolded reconstruction model (ERP1 + loss CSV).
    Train(Train),
    /// Reconstruct a measurement, or a directory of them (HSC1 + per-stage CSV).
    Reconstruct(Reconstruct),
    /// Score reconstructions against ground truth (quality CSV).
    Evaluate(Evaluate),
    /// Convert run artifacts in a directory into plot-ready CSV files.
    ExportPlots(ExportPlots),
}

#[derive(Args, Debug)]
struct GenSpectra {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    bands: usize,
    #[arg(long, default_value_t = 1000.0)]
    start_nm: f64,
    #[arg(long, default_value_t = 2500.0)]
    end_nm: f64,
    #[arg(long, default_value_t = 0.08)]
    gmax: f64,
    #[arg(long, default_value_t = 0.3)]
    rmin: f64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Fps,
    Innerproduct,
    Oracle,
}

#[derive(Args, Debug)]
struct SelectFilters {
    #[arg(id = "in", long = "in")]
    input: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value_t = Method::Fps)]
    method: Method,
    /// Rank candidates by |p| rather than signed p.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    abs: bool,
    /// Replacement threshold of the inner-product baseline.
    #[arg(long, default_value_t = 0.85)]
    tau: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct GenScenes {
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 8)]
    bands: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Encode {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    filters: PathBuf,
    /// Mosaic period; defaults to the square root of the filter count.
    #[arg(long)]
    mosaic_s: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct ModelShape {
    #[arg(long, default_value_t = 3)]
    stages: usize,
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long, default_value_t = 4)]
    reduction: usize,
    #[arg(long, default_value_t = 8)]
    queries: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    shared: bool,
}

impl ModelShape {
    fn config(&self, bands: usize, rho_init: f64) -> ErraConfig {
        ErraConfig {
            net: NetShape { bands, channels: self.channels, reduction: self.reduction, queries: self.queries },
            stages: self.stages,
            share_params: self.shared,
            rho_init,
        }
    }
}

#[derive(Args, Debug)]
struct Train {
    /// Directory of HSC1 scenes, or a single scene.
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    filters: PathBuf,
    #[command(flatten)]
    shape: ModelShape,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 2e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the weight initialization; defaults to `seed`.
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Square crop side; 0 keeps full scenes.
    #[arg(long, default_value_t = 0)]
    crop: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    augment: bool,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Reconstruct {
    /// MSR1 file, or a directory of them.
    #[arg(long)]
    measurement: PathBuf,
    #[arg(long)]
    filters: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = false, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    classical: bool,
    #[command(flatten)]
    shape: ModelShape,
    /// Classical step size; defaults to the inverse mosaic Lipschitz constant.
    #[arg(long)]
    rho: Option<f64>,
    /// Classical soft threshold.
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    /// Ground truth for per-stage quality columns.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Evaluate {
    #[arg(long)]
    recon: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct ExportPlots {
    #[arg(id = "in", long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let program = argv.first().cloned().unwrap_or_else(|| "metahsi".into());
    let args: Vec<String> = match argv.iter().skip(1).map(|a| a.clone().into_string()).collect() {
        Ok(a) => a,
        Err(bad) => {
            eprintln!("error: argument {bad:?} is not valid UTF-8");
            return EXIT_USAGE;
        }
    };
    if args.is_empty() {
        eprintln!("{}", Cli::command().render_help());
        eprintln!("Additional command:\n  replay <MANIFEST> [FLAGS]  Rerun a command from its manifest; flags override its entries");
        return EXIT_USAGE;
    }
    let args = match expand(args) {
        Ok(a) => a,
        Err(Expand::Usage(msg)) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
        Err(Expand::Failure(e)) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    let matches = match Cli::command().try_get_matches_from(std::iter::once(program).chain(args.into_iter().map(OsString::from))) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    if let Command::Reconstruct(r) = &cli.command {
        if r.classical == r.model.is_some() {
            eprintln!("error: reconstruct needs exactly one of --model and --classical");
            return EXIT_USAGE;
        }
    }
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let manifest = resolved_manifest(name, sub);
    match execute(cli.command, manifest) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

enum Expand {
    Usage(String),
    Failure(Error),
}

fn has_flag(args: &[String], key: &str) -> bool {
    let flag = format!("--{key}");
    let prefix = format!("--{key}=");
    args.iter().any(|a| *a == flag || a.starts_with(&prefix))
}

/// Appends `--key value` for every entry whose flag is not already given.
fn merge(args: &mut Vec<String>, m: &RunManifest) {
    let mut extra = Vec::new();
    for (k, v) in m.options() {
        if !has_flag(args, k) {
            extra.push(format!("--{k}"));
            extra.push(v.to_string());
        }
    }
    args.extend(extra);
}

/// Rewrites `replay` and `--config` invocations into plain flag lists.
fn expand(mut args: Vec<String>) -> std::result::Result<Vec<String>, Expand> {
    if args[0] == "replay" {
        let path = args.get(1).ok_or_else(|| Expand::Usage("replay needs a manifest path".into()))?;
        let m = RunManifest::load(Path::new(path)).map_err(Expand::Failure)?;
        let command = m.command().ok_or_else(|| Expand::Failure(Error::format(path, "manifest has no command entry")))?.to_string();
        let mut out = vec![command];
        out.extend(args.drain(2..));
        merge(&mut out, &m);
        return Ok(out);
    }
    let pos = args.iter().position(|a| a == "--config" || a.starts_with("--config="));
    if let Some(i) = pos {
        let path = if let Some(p) = args[i].strip_prefix("--config=") {
            let p = p.to_string();
            args.remove(i);
            p
        } else {
            if i + 1 >= args.len() {
                return Err(Expand::Usage("--config needs a file path".into()));
            }
            let p = args.remove(i + 1);
            args.remove(i);
            p
        };
        let m = RunManifest::load(Path::new(&path)).map_err(Expand::Failure)?;
        merge(&mut args, &m);
    }
    Ok(args)
}

/// Every resolved option of the subcommand, defaults included.
fn resolved_manifest(name: &str, sub: &ArgMatches) -> RunManifest {
    let mut m = RunManifest::for_command(name);
    let cmd = Cli::command();
    let args: Vec<String> = cmd
        .find_subcommand(name)
        .map(|c| c.get_arguments().map(|a| a.get_id().as_str().to_string()).collect())
        .unwrap_or_default();
    for id in sub.ids() {
        let id = id.as_str();
        // Group ids from flattened structs are not arguments.
        if id == "threads" || !args.iter().any(|a| a == id) {
            continue;
        }
        if let Ok(Some(raw)) = sub.try_get_raw(id) {
            let vals: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
            if !vals.is_empty() {
                m.set(&id.replace('_', "-"), vals.join(","));
            }
        }
    }
    m
}

fn execute(command: Command, manifest: RunManifest) -> Result<()> {
    let threads = match &command {
        Command::GenSpectra(c) => c.common.threads,
        Command::SelectFilters(c) => c.common.threads,
        Command::GenScenes(c) => c.common.threads,
        Command::Encode(c) => c.common.threads,
        Command::Train(c) => c.common.threads,
        Command::Reconstruct(c) => c.common.threads,
        Command::Evaluate(c) => c.common.threads,
        Command::ExportPlots(c) => c.common.threads,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {threads} threads: {e}")))?;
    pool.install(|| {
        let out = match command {
            Command::GenSpectra(c) => gen_spectra(c)?,
            Command::SelectFilters(c) => select_filters(c)?,
            Command::GenScenes(c) => gen_scenes(c)?,
            Command::Encode(c) => encode(c)?,
            Command::Train(c) => train(c)?,
            Command::Reconstruct(c) => reconstruct(c)?,
            Command::Evaluate(c) => evaluate(c)?,
            Command::ExportPlots(c) => export_plots(c)?,
        };
        manifest.save(&manifest_path(&out))
    })
}

fn gen_spectra(c: GenSpectra) -> Result<PathBuf> {
    let cfg = GeneratorConfig {
        n: c.n,
        seed: c.seed,
        bands: c.bands,
        start_nm: c.start_nm,
        end_nm: c.end_nm,
        constraints: SpectrumConstraints { g_max: c.gmax, r_min: c.rmin },
        ..Default::default()
    };
    let ds = spectra::generate_synthetic(&cfg)?;
    spectra::save(&ds, &c.out)?;
    println!("wrote {} spectra x {} bands to {}", ds.len(), ds.bands(), c.out.display());
    Ok(c.out)
}

/// Sibling CSV of a selection file holding its correlation matrix.
pub fn correlation_csv_path(selection: &Path) -> PathBuf {
    selection.with_extension("csv")
}

fn select_filters(c: SelectFilters) -> Result<PathBuf> {
    let ds = spectra::load(&c.input)?;
    let r = match c.method {
        Method::Fps => selection::select_fps(&ds, c.k, c.abs)?,
        Method::Innerproduct => selection::select_innerproduct_baseline(&ds, c.k, &BaselineConfig { tau: c.tau, seed: c.seed, max_iters: c.max_iters })?,
        Method::Oracle => selection::brute_force_oracle(&ds, c.k)?,
    };
    selection::save_selection(&r, &c.out)?;
    selection::correlation_report(&r, &correlation_csv_path(&c.out))?;
    if !r.converged {
        eprintln!("warning: baseline stopped after {} iterations without meeting tau={}", c.max_iters, c.tau);
    }
    println!("selected {:?}, max off-diagonal |p| = {:.6}", r.indices, r.max_offdiag);
    Ok(c.out)
}

pub fn scene_file_name(i: usize) -> String {
    format!("scene_{i:03}.{SCENE_EXT}")
}

fn gen_scenes(c: GenScenes) -> Result<PathBuf> {
    let cfg = SceneConfig { height: c.height, width: c.width, bands: c.bands, ..Default::default() };
    let cubes = scenes::generate_scenes(c.n, &cfg, c.seed)?;
    fs::create_dir_all(&c.out).map_err(|e| Error::io(&c.out, e))?;
    for (i, x) in cubes.iter().enumerate() {
        imaging::save_cube(x, &c.out.join(scene_file_name(i)))?;
    }
    println!("wrote {} scenes of {}x{}x{} to {}", c.n, c.height, c.width, c.bands, c.out.display());
    Ok(c.out)
}

/// Files with extension `ext` in `dir`, sorted by name.
fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == ext))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no .{ext} files in {}", dir.display())));
    }
    Ok(files)
}

/// `(input, output)` pairs: a file maps to `out`; a directory maps each
/// `.in_ext` file to `out/<stem>.out_ext`.
fn io_pairs(input: &Path, out: &Path, in_ext: &str, out_ext: &str) -> Result<Vec<(PathBuf, PathBuf)>> {
    if input.is_dir() {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(list_files(input, in_ext)?
            .into_iter()
            .map(|p| {
                let name = Path::new(p.file_stem().expect("listed files have names")).with_extension(out_ext);
                let o = out.join(name);
                (p, o)
            })
            .collect())
    } else {
        Ok(vec![(input.to_path_buf(), out.to_path_buf())])
    }
}

fn load_filters(path: &Path) -> Result<SelectionResult> {
    selection::load_selection(path)
}

/// Mosaic of the saved selection at `h x w`; the period defaults to the
/// square root of the filter count.
fn mosaic(sel: &SelectionResult, h: usize, w: usize, period: Option<usize>) -> Result<FilterArray> {
    let s = match period {
        Some(s) => s,
        None => {
            let s = (sel.k() as f64).sqrt().round() as usize;
            if s * s != sel.k() {
                return Err(Error::InvalidArgument(format!("{} filters do not tile a square mosaic; pass --mosaic-s", sel.k())));
            }
            s
        }
    };
    build_mosaic(sel, h, w, s)
}

fn encode(c: Encode) -> Result<PathBuf> {
    let sel = load_filters(&c.filters)?;
    let pairs = io_pairs(&c.scene, &c.out, SCENE_EXT, MEASUREMENT_EXT)?;
    for (i, (src, dst)) in pairs.iter().enumerate() {
        let x = imaging::load_cube(src)?;
        let phi = mosaic(&sel, x.height(), x.width(), c.mosaic_s)?;
        // Each scene of a batch gets its own noise stream.
        let seed = if pairs.len() == 1 { c.seed } else { crate::rng::derive_seed(c.seed, i as u64) };
        let y = imaging::encode(&x, &phi, c.sigma, seed)?;
        imaging::save_measurement(&y, dst)?;
    }
    println!("encoded {} scene(s) into {}", pairs.len(), c.out.display());
    Ok(c.out)
}

fn load_scenes(path: &Path) -> Result<Vec<HyperCube>> {
    if path.is_dir() {
        list_files(path, SCENE_EXT)?.iter().map(|p| imaging::load_cube(p)).collect()
    } else {
        Ok(vec![imaging::load_cube(path)?])
    }
}

pub fn loss_csv_path(model: &Path) -> PathBuf {
    model.with_extension("loss.csv")
}

fn train(c: Train) -> Result<PathBuf> {
    let scenes = load_scenes(&c.scenes)?;
    let sel = load_filters(&c.filters)?;
    let phi = mosaic(&sel, scenes[0].height(), scenes[0].width(), None)?;
    let cfg = c.shape.config(phi.bands(), 1.0 / phi.max_energy());
    let mut model = ErraModel::<f32>::new(cfg, c.init_seed.unwrap_or(c.seed))?;
    let tc = TrainConfig { epochs: c.epochs, lr: c.lr, seed: c.seed, noise_sigma: c.sigma, crop: (c.crop > 0).then_some(c.crop), rotate_flip: c.augment };
    let report = recon::train(&mut model, &scenes, &phi, &tc, |e, l| {
        println!("epoch {:>4}  loss {l:.6e}", e + 1);
        let _ = std::io::stdout().flush();
    })?;
    model.save(&c.out)?;
    report.write_csv(&loss_csv_path(&c.out))?;
    Ok(c.out)
}

pub fn stage_csv_path(recon: &Path) -> PathBuf {
    recon.with_extension("stages.csv")
}

fn reconstruct(c: Reconstruct) -> Result<PathBuf> {
    let sel = load_filters(&c.filters)?;
    let pairs = io_pairs(&c.measurement, &c.out, MEASUREMENT_EXT, SCENE_EXT)?;
    let mut model: Option<ErraModel<f32>> = None;
    for (src, dst) in &pairs {
        let y = imaging::load_measurement(src)?;
        let phi = mosaic(&sel, y.height, y.width, None)?;
        let cfg = if c.classical {
            let rho = c.rho.unwrap_or(1.0 / phi.max_energy());
            UnfoldingConfig::classical(c.shape.stages, rho, c.threshold)
        } else {
            if model.is_none() {
                let path = c.model.as_ref().expect("checked before dispatch");
                model = Some(ErraModel::load(c.shape.config(phi.bands(), 1.0), path)?);
            }
            UnfoldingConfig { stages: c.shape.stages, rho_init: 1.0, share_params: c.shape.shared, prox: ProxKind::Erra }
        };
        let res = recon::run_unfolding(&y, &phi, &cfg, model.as_ref())?;
        imaging::save_cube(&res.estimate, dst)?;
        let truth = match &c.truth {
            Some(t) if t.is_dir() => Some(imaging::load_cube(&t.join(Path::new(dst.file_name().expect("output has a name"))))?),
            Some(t) => Some(imaging::load_cube(t)?),
            None => None,
        };
        write_stage_csv(&stage_csv_path(dst), &res, truth.as_ref())?;
    }
    println!("reconstructed {} measurement(s) into {}", pairs.len(), c.out.display());
    Ok(c.out)
}

fn write_stage_csv(path: &Path, res: &recon::UnfoldingResult, truth: Option<&HyperCube>) -> Result<()> {
    let mut s = String::from(if truth.is_some() { "stage,fidelity,psnr_db,ssim\n" } else { "stage,fidelity\n" });
    for (k, f) in res.fidelity.iter().enumerate() {
        s.push_str(&format!("{k},{f}"));
        if let Some(t) = truth {
            // Stage 0 is the initial estimate, which the result does not keep.
            if let Some(st) = k.checked_sub(1).map(|i| &res.stages[i].x) {
                let p = metrics::psnr(st, t, 1.0)?.min(metrics::PSNR_CAP_DB);
                s.push_str(&format!(",{p},{}", metrics::ssim(st, t)?));
            } else {
                s.push_str(",,");
            }
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn evaluate(c: Evaluate) -> Result<PathBuf> {
    let pairs: Vec<(String, PathBuf, PathBuf)> = if c.recon.is_dir() {
        list_files(&c.recon, SCENE_EXT)?
            .into_iter()
            .map(|p| {
                let name = p.file_name().expect("listed files have names").to_owned();
                let id = p.file_stem().expect("listed files have names").to_string_lossy().into_owned();
                (id, p, c.truth.join(name))
            })
            .collect()
    } else {
        let id = c.recon.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        vec![(id, c.recon.clone(), c.truth.clone())]
    };
    let mut cubes = Vec::with_capacity(pairs.len());
    for (id, r, t) in pairs {
        cubes.push((id, imaging::load_cube(&r)?, imaging::load_cube(&t)?));
    }
    let refs: Vec<(String, &HyperCube, &HyperCube)> = cubes.iter().map(|(id, r, t)| (id.clone(), r, t)).collect();
    let q = metrics::report(&refs, &c.out)?;
    println!("average PSNR {:.3} dB, SSIM {:.4} over {} scene(s)", q.avg_psnr_db, q.avg_ssim, q.per_scene.len());
    Ok(c.out)
}

fn copy_csv(src: &Path, dst: &Path) -> Result<()> {
    fs::copy(src, dst).map_err(|e| Error::io(src, e)).map(|_| ())
}

fn export_plots(c: ExportPlots) -> Result<PathBuf> {
    if !c.input.is_dir() {
        return Err(Error::InvalidArgument(format!("--in must be a directory, got {}", c.input.display())));
    }
    fs::create_dir_all(&c.out).map_err(|e| Error::io(&c.out, e))?;
    let mut entries: Vec<PathBuf> = fs::read_dir(&c.input).map_err(|e| Error::io(&c.input, e))?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect();
    entries.sort();
    let mut written = 0usize;
    for p in entries {
        let name = p.file_name().expect("files have names").to_string_lossy().into_owned();
        let stem = name.split('.').next().unwrap_or(&name).to_string();
        let mut magic = [0u8; 4];
        let is_spc = fs::File::open(&p).and_then(|mut f| std::io::Read::read_exact(&mut f, &mut magic)).is_ok() && &magic == b"SPC1";
        if is_spc {
            let ds = spectra::load(&p)?;
            spectra::write_csv(&ds, &c.out.join(format!("spectra_{stem}.csv")))?;
            let stats = spectra::pearson_stats(&ds)?;
            let mut s = String::new();
            for i in 0..ds.len() {
                let row: Vec<String> = stats.p.row(i).iter().map(|v| v.to_string()).collect();
                s.push_str(&row.join(","));
                s.push('\n');
            }
            let path = c.out.join(format!("correlation_{stem}.csv"));
            fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
            written += 2;
            continue;
        }
        if !name.ends_with(".csv") {
            continue;
        }
        let head = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?.lines().next().unwrap_or_default().to_string();
        let kind = if head == "epoch,loss" {
            "loss"
        } else if head.starts_with("stage,fidelity") {
            "stages"
        } else if head == "scene_id,psnr_db,ssim" {
            "quality"
        } else {
            continue;
        };
        copy_csv(&p, &c.out.join(format!("{kind}_{stem}.csv")))?;
        written += 1;
    }
    println!("exported {written} CSV file(s) to {}", c.out.display());
    Ok(c.out)
}
