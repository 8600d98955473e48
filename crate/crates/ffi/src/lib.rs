//! C ABI over the metahsi toolkit.
//!
//! Every fallible function returns a [`MhsiStatus`]; on failure the
//! thread-local message from [`mhsi_last_error_message`] describes it.
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free` function. Output handles are written only on
//! success. Panics never unwind into C; they surface as `MHSI_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use metahsi::erra::{ErraConfig, ErraModel};
use metahsi::imaging::{self, FilterArray, HyperCube, Measurement};
use metahsi::recon::{self, UnfoldingConfig};
use metahsi::selection::{self, SelectionResult};
use metahsi::spectra::{self, GeneratorConfig, MetasurfaceDataset, SpectrumConstraints};
use metahsi::{metrics, Error};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MhsiStatus {
    MhsiOk = 0,
    MhsiNullPointer = 1,
    MhsiInvalidArgument = 2,
    MhsiShapeMismatch = 3,
    MhsiIo = 4,
    MhsiFormat = 5,
    MhsiNumerical = 6,
    MhsiBudgetExceeded = 7,
    MhsiPanic = 8,
}

/// Spectral library.
pub struct MhsiDataset(MetasurfaceDataset);
/// Chosen filter subset.
pub struct MhsiSelection(SelectionResult);
/// Periodic filter mosaic sized to a sensor.
pub struct MhsiFilters(FilterArray);
/// Hyperspectral cube, `height x width x bands`, band index fastest.
pub struct MhsiCube(HyperCube);
/// Single-exposure sensor reading.
pub struct MhsiMeasurement(Measurement);
/// Trained unfolding network.
pub struct MhsiModel(ErraModel<f32>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    // Interior NULs would truncate the message; replace them.
    let msg = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> MhsiStatus {
    match e {
        Error::ShapeMismatch { .. } => MhsiStatus::MhsiShapeMismatch,
        Error::InvalidArgument(_) | Error::DegenerateSpectrum { .. } => MhsiStatus::MhsiInvalidArgument,
        Error::RejectionBudgetExceeded { .. } | Error::BudgetExceeded { .. } => MhsiStatus::MhsiBudgetExceeded,
        Error::Format { .. } => MhsiStatus::MhsiFormat,
        Error::NonFinite(_) | Error::NonDeterministic { .. } | Error::Diverged { .. } => MhsiStatus::MhsiNumerical,
        Error::Io { .. } => MhsiStatus::MhsiIo,
    }
}

/// Failure inside the shim, before or after calling the library.
struct Fail(MhsiStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MhsiStatus::MhsiNullPointer, format!("{what} is null"))
}

/// Runs `f`, records any failure, and maps panics to `MhsiPanic`.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MhsiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MhsiStatus::MhsiOk
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned()).unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            MhsiStatus::MhsiPanic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail(MhsiStatus::MhsiInvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_value<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output"));
    }
    *out = value;
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

// ------------------------------------------------------------------ errors

/// Message for the most recent failure on this thread, or NULL after a
/// success. Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn mhsi_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static, NUL-terminated name of a status code.
#[no_mangle]
pub extern "C" fn mhsi_status_name(status: MhsiStatus) -> *const c_char {
    let s: &'static CStr = match status {
        MhsiStatus::MhsiOk => c"ok",
        MhsiStatus::MhsiNullPointer => c"null pointer",
        MhsiStatus::MhsiInvalidArgument => c"invalid argument",
        MhsiStatus::MhsiShapeMismatch => c"shape mismatch",
        MhsiStatus::MhsiIo => c"i/o error",
        MhsiStatus::MhsiFormat => c"format error",
        MhsiStatus::MhsiNumerical => c"numerical failure",
        MhsiStatus::MhsiBudgetExceeded => c"budget exceeded",
        MhsiStatus::MhsiPanic => c"internal panic",
    };
    s.as_ptr()
}

/// Library version, static and NUL-terminated.
#[no_mangle]
pub extern "C" fn mhsi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ------------------------------------------------------------------ spectra

/// Synthetic library of `n` spectra on `bands` uniform bands.
/// `g_max` bounds the step between adjacent bands, `r_min` the dynamic range.
#[no_mangle]
pub unsafe extern "C" fn mhsi_dataset_generate(n: usize, bands: usize, seed: u64, g_max: f64, r_min: f64, out: *mut *mut MhsiDataset) -> MhsiStatus {
    guard(|| {
        let cfg = GeneratorConfig { n, bands, seed, constraints: SpectrumConstraints { g_max, r_min }, ..Default::default() };
        put(out, MhsiDataset(spectra::generate_synthetic(&cfg)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn mhsi_dataset_load(file: *const c_char, out: *mut *mut MhsiDataset) -> MhsiStatus {
    guard(|| put(out, MhsiDataset(spectra::load(&path(file)?)?)))
}

#[no_mangle]
pub unsafe extern "C" fn mhsi_dataset_save(ds: *const MhsiDataset, file: *const c_char) -> MhsiStatus {
    guard(|| Ok(spectra::save(&get(ds, "dataset")?.0, &path(file)?)?))
}

/// Number of spectra and bands.
#[no_mangle]
pub unsafe extern "C" fn mhsi_dataset_shape(ds: *const MhsiDataset, n: *mut usize, bands: *mut usize) -> MhsiStatus {
    guard(|| {
        let ds = &get(ds, "dataset")?.0;
        put_value(n, ds.len())?;
        put_value(bands, ds.bands())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mhsi_dataset_free(ds: *mut MhsiDataset) {
    free(ds)
}

// ------------------------------------------------------------------ selection

/// Greedy minimum-correlation selection of `k` filters.
#[no_mangle]
pub unsafe extern "C" fn mhsi_select_fps(ds: *const MhsiDataset, k: usize, use_abs: bool, out: *mut *mut MhsiSelection) -> MhsiStatus {
    guard(|| put(out, MhsiSelection(selection::select_fps(&get(ds, "dataset")?.0, k, use_abs)?)))
}

/// Exhaustive minimum over all `k`-subsets; fails when there are too many.
#[no_mangle]
pub unsafe extern "C" fn mhsi_select_oracle(ds: *const MhsiDataset, k: usize, out: *mut *mut MhsiSelection) -> MhsiStatus {
    guard(|| put(out, MhsiSelection(selection::brute_force_oracle(&get(ds, "dataset")?.0, k)?)))
}

#[no_mangle]
pub unsafe extern "C" fn mhsi_selection_load(file: *const c_char, out: *mut *mut MhsiSelection) -> MhsiStatus {
    guard(|| put(out, MhsiSelection(selection::load_selection(&path(file)?)?)))
}

#[no_mangle]
pub unsafe extern "C" fn mhsi_selection_save(sel: *const MhsiSelection, file: *const c_char) -> MhsiStatus {
    guard(|| Ok(selection::save_selection(&get(sel, "selection")?.0, &path(file)?)?))
}

/// Copies the chosen dataset rows into `indices[0..k]`; `capacity` must be
/// at least `k`. `k` and the largest pairwise |correlation| are reported.
#[no_mangle]
pub unsafe extern "C" fn mhsi_selection_info(sel: *const MhsiSelection, indices: *mut usize, capacity: usize, k: *mut usize, max_offdiag: *mut f64) -> MhsiStatus {
    guard(|| {
        let sel = &get(sel, "selection")?.0;
        put_value(k, sel.k())?;
        put_value(max_offdiag, sel.max_offdiag)?;
        if !indices.is_null() {
            if capacity < sel.k() {
                return Err(Fail(MhsiStatus::MhsiInvalidArgument, format!("index buffer holds {capacity}, selection has {}", sel.k())));
            }
            std::slice::from_raw_parts_mut(indices, sel.k()).copy_from_slice(&sel.indices);
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mhsi_selection_free(sel: *mut MhsiSelection) {
    free(sel)
}

// ------------------------------------------------------------------ imaging

/// Tiles the selection as a `period x period` mosaic over `height x width`.
#[no_mangle]
pub unsafe extern "C" fn mhsi_filters_from_selection(sel: *const MhsiSelection, height: usize, width: usize, period: usize, out: *mut *mut MhsiFilters) -> MhsiStatus {
    guard(|| put(out, MhsiFilters(imaging::build_mosaic(&get(sel, "selection")?.0, height, width, period)?)))
}

/// Mosaic from raw transmittances: `period * period` rows of `bands`
/// values, tile position `(i, j)` at row `i * period + j`.
#[no_mangle]
pub unsafe extern "C" fn mhsi_filters_new(theta: *const f64, bands: usize, height: usize, width: usize, period: usize, out: *mut *mut MhsiFilters) -> MhsiStatus {
    guard(|| {
        if theta.is_null() {
            return Err(null("theta"));
        }
        let n = period.checked_mul(period).and_then(|v| v.checked_mul(bands)).ok_or_else(|| Fail(MhsiStatus::MhsiInvalidArgument, "filter table size overflows".into()))?;
        let values = std::slice::from_raw_parts(theta, n).to_vec();
        put(out, MhsiFilters(FilterArray::new(values, bands, height, width, period)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn mhsi_filters_free(f: *mut MhsiFilters) {
    free(f)
}

/// Copies `height * width * bands` values, band index fastest.
#[no_mangle]
pub unsafe extern "C" fn mhsi_cube_new(height: usize, width: usize, bands: usize, data: *const f64, out: *mut *mut MhsiCube) -> MhsiStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let n = height.checked_mul(width).and_then(|v| v.checked_mul(bands)).ok_or_else(|| Fail(MhsiStatus::MhsiInvalidArgument, "cube size overflows".into()))?;
        let values = std::slice::from_raw_parts(data, n).to_vec();
        put(out, MhsiCube(HyperCube::new(height, width, bands, values)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn mhsi_cube_load(file: *const c_char, out: *mut *mut MhsiCube) -> MhsiStatus {
    guard(|| put(out, MhsiCube(imaging::load_cube(&path(file)?)?)))
}

#[no_mangle]
pub unsafe extern "C" fn mhsi_cube_save(cube: *const MhsiCube, file: *const c_char) -> MhsiStatus {
    guard(|| Ok(imaging::save_cube(&get(cube, "cube")?.0, &path(file)?)?))
}

#[no_mangle]
pub unsafe extern "C" fn mhsi_cube_dims(cube: *const MhsiCube, height: *mut usize, width: *mut usize, bands: *mut usize) -> MhsiStatus {
    guard(|| {
        let (h, w, l) = get(cube, "cube")?.0.dims();
        put_value(height, h)?;
        put_value(width, w)?;
        put_value(bands, l)
    })
}

/// Copies the cube into `buffer`, which must hold `capacity >= h * w * bands`.
#[no_mangle]
pub unsafe extern "C" fn mhsi_cube_read(cube: *const MhsiCube, buffer: *mut f64, capacity: usize) -> MhsiStatus {
    guard(|| {
        let data = get(cube, "cube")?.0.data();
        if buffer.is_null() {
            return Err(null("buffer"));
        }
        if capacity < data.len() {
            return Err(Fail(MhsiStatus::MhsiInvalidArgument, format!("buffer holds {capacity}, cube has {}", data.len())));
        }
        std::slice::from_raw_parts_mut(buffer, data.len()).copy_from_slice(data);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mhsi_cube_free(cube: *mut MhsiCube) {
    free(cube)
}

/// Snapshot reading with Gaussian noise of std `sigma` drawn from `seed`.
#[no_mangle]
pub unsafe extern "C" fn mhsi_encode(cube: *const MhsiCube, filters: *const MhsiFilters, sigma: f64, seed: u64, out: *mut *mut MhsiMeasurement) -> MhsiStatus {
    guard(|| put(out, MhsiMeasurement(imaging::encode(&get(cube, "cube")?.0, &get(filters, "filters")?.0, sigma, seed)?)))
}

#[no_mangle]
pub unsafe extern "C" fn mhsi_measurement_load(file: *const c_char, out: *mut *mut MhsiMeasurement) -> MhsiStatus {
    guard(|| put(out, MhsiMeasurement(imaging::load_measurement(&path(file)?)?)))
}

#[no_mangle]
pub unsafe extern "C" fn mhsi_measurement_save(m: *const MhsiMeasurement, file: *const c_char) -> MhsiStatus {
    guard(|| Ok(imaging::save_measurement(&get(m, "measurement")?.0, &path(file)?)?))
}

#[no_mangle]
pub unsafe extern "C" fn mhsi_measurement_free(m: *mut MhsiMeasurement) {
    free(m)
}

// ------------------------------------------------------------------ reconstruction

/// Per-pixel initial estimate from the reading alone.
#[no_mangle]
pub unsafe extern "C" fn mhsi_init_estimate(m: *const MhsiMeasurement, filters: *const MhsiFilters, out: *mut *mut MhsiCube) -> MhsiStatus {
    guard(|| put(out, MhsiCube(imaging::init_estimate(&get(m, "measurement")?.0, &get(filters, "filters")?.0)?)))
}

/// `stages` gradient steps of size `rho`, each followed by soft thresholding.
#[no_mangle]
pub unsafe extern "C" fn mhsi_reconstruct_classical(
    m: *const MhsiMeasurement,
    filters: *const MhsiFilters,
    stages: usize,
    rho: f64,
    threshold: f64,
    out: *mut *mut MhsiCube,
) -> MhsiStatus {
    guard(|| {
        let cfg = UnfoldingConfig::classical(stages, rho, threshold);
        let res = recon::run_unfolding(&get(m, "measurement")?.0, &get(filters, "filters")?.0, &cfg, None)?;
        put(out, MhsiCube(res.estimate))
    })
}

/// Loads an ERP1 checkpoint; the shape arguments must match training.
#[no_mangle]
pub unsafe extern "C" fn mhsi_model_load(
    file: *const c_char,
    bands: usize,
    channels: usize,
    stages: usize,
    reduction: usize,
    queries: usize,
    shared: bool,
    out: *mut *mut MhsiModel,
) -> MhsiStatus {
    guard(|| {
        let mut cfg = ErraConfig::new(bands, channels, stages);
        cfg.net.reduction = reduction;
        cfg.net.queries = queries;
        cfg.share_params = shared;
        put(out, MhsiModel(ErraModel::load(cfg, &path(file)?)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn mhsi_model_reconstruct(model: *const MhsiModel, m: *const MhsiMeasurement, filters: *const MhsiFilters, out: *mut *mut MhsiCube) -> MhsiStatus {
    guard(|| put(out, MhsiCube(get(model, "model")?.0.reconstruct(&get(m, "measurement")?.0, &get(filters, "filters")?.0)?)))
}

#[no_mangle]
pub unsafe extern "C" fn mhsi_model_free(model: *mut MhsiModel) {
    free(model)
}

// ------------------------------------------------------------------ metrics

/// PSNR in dB for peak `max_val`; +inf for identical cubes.
#[no_mangle]
pub unsafe extern "C" fn mhsi_psnr(x: *const MhsiCube, reference: *const MhsiCube, max_val: f64, out: *mut f64) -> MhsiStatus {
    guard(|| put_value(out, metrics::psnr(&get(x, "cube")?.0, &get(reference, "reference")?.0, max_val)?))
}

/// Band-averaged SSIM.
#[no_mangle]
pub unsafe extern "C" fn mhsi_ssim(x: *const MhsiCube, reference: *const MhsiCube, out: *mut f64) -> MhsiStatus {
    guard(|| put_value(out, metrics::ssim(&get(x, "cube")?.0, &get(reference, "reference")?.0)?))
}
