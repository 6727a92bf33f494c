//! C ABI over `eroc-core`.
//!
//! Every fallible function returns an [`ErocStatus`]. On failure the message
//! is kept per thread and read with [`eroc_last_error`]. Objects are opaque
//! handles created by `*_load`/`*_create`/`*_generate` and released with the
//! matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use eroc_core::config::ExperimentConfig;
use eroc_core::eroc::{aeroc, BootstrapConfig, PresentScore};
use eroc_core::error::Error;
use eroc_core::experiment::{build_observer, generate_test_set};
use eroc_core::image::Image;
use eroc_core::nn::{load_model, MultiTaskNet};
use eroc_core::observers::{build_slo, Observer, ObserverKind, SloModel};
use eroc_core::rng::{stream, Purpose};
use eroc_core::sim::{generate_dataset, Dataset, DatasetOptions};
use eroc_core::utility::UtilityFn;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErocStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    MissingArtifact = 3,
    Unsupported = 4,
    Runtime = 5,
    Panic = 6,
}

/// AEROC point estimate with its percentile-bootstrap interval.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErocAeroc {
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Resolved experiment configuration.
pub struct ErocConfig(ExperimentConfig);

/// Labeled image container.
pub struct ErocDataset(Dataset);

/// Trained multi-task network.
pub struct ErocModel(MultiTaskNet);

/// Observer bound to a task.
pub struct ErocObserver {
    inner: Box<dyn Observer>,
    width: usize,
    height: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(ErocStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            _ if e.is_config_error() => ErocStatus::InvalidArgument,
            Error::ShapeMismatch { .. } | Error::DimensionMismatch { .. } | Error::Empty(_) => {
                ErocStatus::InvalidArgument
            }
            Error::MissingArtifact { .. } => ErocStatus::MissingArtifact,
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => ErocStatus::MissingArtifact,
            Error::UnsupportedTask(_) => ErocStatus::Unsupported,
            _ => ErocStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(ErocStatus::NullArgument, format!("`{name}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(ErocStatus::InvalidArgument, msg.into())
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ErocStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ErocStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            ErocStatus::Panic
        }
    }
}

unsafe fn string<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{name}` is not UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, n: usize, name: &str) -> Result<&'a [f64], Failure> {
    match (p.is_null(), n) {
        (_, 0) => Ok(&[]),
        (true, _) => Err(null(name)),
        (false, n) => Ok(std::slice::from_raw_parts(p, n)),
    }
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize, name: &str) -> Result<&'a mut [f64], Failure> {
    match (p.is_null(), n) {
        (_, 0) => Ok(&mut []),
        (true, _) => Err(null(name)),
        (false, n) => Ok(std::slice::from_raw_parts_mut(p, n)),
    }
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(value);
    Ok(())
}

unsafe fn image(pixels: *const f64, width: usize, height: usize) -> Result<Image, Failure> {
    let data = slice(pixels, width * height, "pixels")?;
    Ok(Image::from_vec(width, height, data.to_vec())?)
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn eroc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn eroc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Loads a config file or bundled preset. `profile` may be null for the
/// desk profile.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eroc_config_load(
    path_or_preset: *const c_char,
    profile: *const c_char,
    out: *mut *mut ErocConfig,
) -> ErocStatus {
    guard(|| {
        let src = string(path_or_preset, "path_or_preset")?;
        let profile = if profile.is_null() {
            None
        } else {
            Some(string(profile, "profile")?)
        };
        let cfg = ExperimentConfig::load(src, profile)?;
        write_out(out, Box::into_raw(Box::new(ErocConfig(cfg))), "out")
    })
}

/// Grid size and parameter dimension of the config's task.
///
/// # Safety
/// `cfg` must come from [`eroc_config_load`]; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn eroc_config_shape(
    cfg: *const ErocConfig,
    width: *mut usize,
    height: *mut usize,
    theta_dim: *mut usize,
) -> ErocStatus {
    guard(|| {
        let task = &handle(cfg, "cfg")?.0.task;
        write_out(width, task.width(), "width")?;
        write_out(height, task.height(), "height")?;
        write_out(theta_dim, task.theta_dim(), "theta_dim")
    })
}

/// # Safety
/// `cfg` must be null or come from [`eroc_config_load`].
#[no_mangle]
pub unsafe extern "C" fn eroc_config_free(cfg: *mut ErocConfig) {
    free(cfg);
}

/// Simulates `n_present + n_absent` images; `n_present = n_absent = 0`
/// draws the config's test set.
///
/// # Safety
/// `cfg` must come from [`eroc_config_load`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eroc_dataset_generate(
    cfg: *const ErocConfig,
    n_present: usize,
    n_absent: usize,
    seed: u64,
    out: *mut *mut ErocDataset,
) -> ErocStatus {
    guard(|| {
        let cfg = &handle(cfg, "cfg")?.0;
        let ds = if n_present == 0 && n_absent == 0 {
            let mut c = cfg.clone();
            c.seed = seed;
            generate_test_set(&c)?
        } else {
            let t = &cfg.task;
            let images = generate_dataset(
                t,
                n_present,
                n_absent,
                seed,
                Purpose::TestSet,
                DatasetOptions::default(),
            )?;
            Dataset::new(t.width(), t.height(), t.theta_dim(), false, images)?
        };
        write_out(out, Box::into_raw(Box::new(ErocDataset(ds))), "out")
    })
}

/// Reads an image container written by `eroc generate`.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eroc_dataset_read(path: *const c_char, out: *mut *mut ErocDataset) -> ErocStatus {
    guard(|| {
        let ds = Dataset::read(Path::new(string(path, "path")?))?;
        write_out(out, Box::into_raw(Box::new(ErocDataset(ds))), "out")
    })
}

/// Number of images, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn eroc_dataset_len(ds: *const ErocDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// Copies image `index` into `pixels` (`pixels_len = width * height`) and its
/// label into `present`. `theta` (length `theta_len = theta_dim`) receives
/// the true parameters, NaN for signal-absent images; it may be null.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn eroc_dataset_image(
    ds: *const ErocDataset,
    index: usize,
    pixels: *mut f64,
    pixels_len: usize,
    present: *mut bool,
    theta: *mut f64,
    theta_len: usize,
) -> ErocStatus {
    guard(|| {
        let ds = &handle(ds, "ds")?.0;
        let im = ds
            .images
            .get(index)
            .ok_or_else(|| invalid(format!("index {index} out of range for {} images", ds.len())))?;
        if pixels_len != im.pixels.len() {
            return Err(invalid(format!("pixels_len must be {}", im.pixels.len())));
        }
        slice_mut(pixels, pixels_len, "pixels")?.copy_from_slice(im.pixels.pixels());
        write_out(present, im.present, "present")?;
        if !theta.is_null() {
            if theta_len != ds.theta_dim {
                return Err(invalid(format!("theta_len must be {}", ds.theta_dim)));
            }
            let t = slice_mut(theta, theta_len, "theta")?;
            match &im.theta {
                Some(v) => t.copy_from_slice(v),
                None => t.fill(f64::NAN),
            }
        }
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn eroc_dataset_free(ds: *mut ErocDataset) {
    free(ds);
}

/// Loads a model file written by `eroc train`.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eroc_model_load(path: *const c_char, out: *mut *mut ErocModel) -> ErocStatus {
    guard(|| {
        let net = load_model(Path::new(string(path, "path")?))?;
        write_out(out, Box::into_raw(Box::new(ErocModel(net))), "out")
    })
}

/// Network log-odds and parameter estimate for one image.
///
/// # Safety
/// `pixels` must hold `width * height` values and `estimate` `estimate_len`.
#[no_mangle]
pub unsafe extern "C" fn eroc_model_forward(
    model: *const ErocModel,
    pixels: *const f64,
    width: usize,
    height: usize,
    log_odds: *mut f64,
    estimate: *mut f64,
    estimate_len: usize,
) -> ErocStatus {
    guard(|| {
        let net = &handle(model, "model")?.0;
        let out = net.forward(&image(pixels, width, height)?)?;
        if estimate_len != out.estimate.len() {
            return Err(invalid(format!("estimate_len must be {}", out.estimate.len())));
        }
        slice_mut(estimate, estimate_len, "estimate")?.copy_from_slice(&out.estimate);
        write_out(log_odds, out.log_odds, "log_odds")
    })
}

/// # Safety
/// `model` must be null or come from [`eroc_model_load`].
#[no_mangle]
pub unsafe extern "C" fn eroc_model_free(model: *mut ErocModel) {
    free(model);
}

/// Builds an observer (`analytic-io`, `mcmc-io`, `hybrid`, `sub-ideal`,
/// `slo`) for the config's task. `model` is required for the learned
/// observers and ignored otherwise; the SLO is built from the config.
///
/// # Safety
/// Handles must come from this library; `model` may be null.
#[no_mangle]
pub unsafe extern "C" fn eroc_observer_create(
    cfg: *const ErocConfig,
    kind: *const c_char,
    model: *const ErocModel,
    out: *mut *mut ErocObserver,
) -> ErocStatus {
    guard(|| {
        let cfg = &handle(cfg, "cfg")?.0;
        let kind = ObserverKind::parse(string(kind, "kind")?)?;
        let net = model.as_ref().map(|m| &m.0);
        let slo: Option<SloModel> = match kind {
            ObserverKind::Slo => {
                let s = cfg
                    .slo
                    .as_ref()
                    .ok_or_else(|| invalid("the config has no [slo] table"))?;
                Some(match &s.model_path {
                    Some(p) => SloModel::load(p)?,
                    None => build_slo(&cfg.task, &s.build(cfg.seed))?,
                })
            }
            _ => None,
        };
        let inner = build_observer(kind, cfg, net, slo.as_ref())?;
        let obs = ErocObserver {
            inner,
            width: cfg.task.width(),
            height: cfg.task.height(),
        };
        write_out(out, Box::into_raw(Box::new(obs)), "out")
    })
}

/// Scores one image. Stochastic observers draw from stream `(seed, index)`,
/// the stream the CLI uses for image `index`.
///
/// # Safety
/// `pixels` must hold `width * height` values; `estimate` may be null,
/// otherwise it must hold `estimate_len` values.
#[no_mangle]
pub unsafe extern "C" fn eroc_observer_score(
    obs: *const ErocObserver,
    pixels: *const f64,
    width: usize,
    height: usize,
    seed: u64,
    index: u64,
    t: *mut f64,
    estimate: *mut f64,
    estimate_len: usize,
) -> ErocStatus {
    guard(|| {
        let obs = handle(obs, "obs")?;
        if (width, height) != (obs.width, obs.height) {
            return Err(invalid(format!("image must be {}x{}", obs.width, obs.height)));
        }
        let g = image(pixels, width, height)?;
        let out = obs.inner.observe(&g, &mut stream(seed, Purpose::Observer, index))?;
        if !estimate.is_null() {
            if estimate_len != out.estimate.len() {
                return Err(invalid(format!("estimate_len must be {}", out.estimate.len())));
            }
            slice_mut(estimate, estimate_len, "estimate")?.copy_from_slice(&out.estimate);
        }
        write_out(t, out.t, "t")
    })
}

/// # Safety
/// `obs` must be null or come from [`eroc_observer_create`].
#[no_mangle]
pub unsafe extern "C" fn eroc_observer_free(obs: *mut ErocObserver) {
    free(obs);
}

/// AEROC of `n_present` scored signal-present cases with utilities
/// `u_present` against `n_absent` signal-absent scores. `resamples = 0`
/// skips the bootstrap and reports the point estimate as both bounds.
///
/// # Safety
/// Arrays must hold the stated number of values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eroc_aeroc(
    t_present: *const f64,
    u_present: *const f64,
    n_present: usize,
    t_absent: *const f64,
    n_absent: usize,
    resamples: usize,
    level: f64,
    seed: u64,
    out: *mut ErocAeroc,
) -> ErocStatus {
    guard(|| {
        let tp = slice(t_present, n_present, "t_present")?;
        let up = slice(u_present, n_present, "u_present")?;
        let ta = slice(t_absent, n_absent, "t_absent")?;
        let present: Vec<PresentScore> = tp.iter().zip(up).map(|(&t, &u)| PresentScore { t, u }).collect();
        let est = if resamples == 0 {
            let v = eroc_core::eroc::aeroc_value(&present, ta)?;
            ErocAeroc {
                value: v,
                ci_lo: v,
                ci_hi: v,
            }
        } else {
            let e = aeroc(&present, ta, &BootstrapConfig { resamples, level, seed })?;
            ErocAeroc {
                value: e.value,
                ci_lo: e.ci_lo,
                ci_hi: e.ci_hi,
            }
        };
        write_out(out, est, "out")
    })
}

/// Evaluates a utility given as `gaussian:3`, `quadratic:200`, `l1:20` or
/// `constant`.
///
/// # Safety
/// `estimate` and `truth` must hold `dim` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eroc_utility_eval(
    spec: *const c_char,
    estimate: *const f64,
    truth: *const f64,
    dim: usize,
    out: *mut f64,
) -> ErocStatus {
    guard(|| {
        let u = UtilityFn::parse(string(spec, "spec")?)?;
        let v = u.evaluate(slice(estimate, dim, "estimate")?, slice(truth, dim, "truth")?)?;
        write_out(out, v, "out")
    })
}
