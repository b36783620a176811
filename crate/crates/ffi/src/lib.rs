//! C ABI over the `mot3d` toolkit.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released by the matching `*_free`. Every fallible function
//! returns a [`Mot3dStatus`]; on failure the message of the most recent
//! error on the calling thread is available from [`mot3d_last_error`].
//! Strings are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mot3d::config::RunConfig;
use mot3d::geometry::{PointCloud, Pose7, Vec3};
use mot3d::neural::{Checkpoint, TrackerNet};
use mot3d::pipeline::{evaluate_dataset, generate_dataset, track_dataset, Tracker};
use mot3d::pose::{umeyama_fit, Correspondences};
use mot3d::Error;

/// Outcome of a call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mot3dStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Config = 3,
    Format = 4,
    EmptyDataset = 5,
    Io = 6,
    PoseFailure = 7,
    DegenerateGeometry = 8,
    UndefinedMetric = 9,
    Internal = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NUL bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> Mot3dStatus {
    match e {
        Error::InvalidInput(_) | Error::ShapeMismatch { .. } | Error::ResolutionMismatch(..) => Mot3dStatus::InvalidInput,
        Error::Config(_) => Mot3dStatus::Config,
        Error::Format(_) | Error::Json(_) => Mot3dStatus::Format,
        Error::EmptyDataset(_) => Mot3dStatus::EmptyDataset,
        Error::Io(_) => Mot3dStatus::Io,
        Error::PoseFailure(_) => Mot3dStatus::PoseFailure,
        Error::DegenerateGeometry(_) => Mot3dStatus::DegenerateGeometry,
        Error::UndefinedMetric(_) => Mot3dStatus::UndefinedMetric,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> Mot3dStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Mot3dStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            Mot3dStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            Mot3dStatus::Internal
        }
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    // SAFETY: the caller passes either null or a pointer from this library
    unsafe { p.as_ref() }.ok_or(Failure::Null(what))
}

fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: non-null, NUL-terminated by contract
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Error::InvalidInput(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mot3d_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Opaque run configuration.
pub struct Mot3dConfig(RunConfig);

/// Opaque trained association network.
pub struct Mot3dTracker(TrackerNet);

/// Default configuration. Never fails; release with [`mot3d_config_free`].
#[no_mangle]
pub extern "C" fn mot3d_config_new() -> *mut Mot3dConfig {
    Box::into_raw(Box::new(Mot3dConfig(RunConfig::default())))
}

/// Parses and validates a TOML configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn mot3d_config_from_toml(toml: *const c_char, out: *mut *mut Mot3dConfig) -> Mot3dStatus {
    guard(|| {
        if toml.is_null() {
            return Err(Failure::Null("toml"));
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|_| Error::InvalidInput("configuration is not UTF-8".into()))?;
        let cfg = RunConfig::from_toml(text)?;
        *out = Box::into_raw(Box::new(Mot3dConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mot3d_config_free(cfg: *mut Mot3dConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// # Safety
/// `cfg` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn mot3d_config_set_seed(cfg: *mut Mot3dConfig, seed: u64) -> Mot3dStatus {
    guard(|| {
        cfg.as_mut().ok_or(Failure::Null("cfg"))?.0.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn mot3d_config_set_sequences(cfg: *mut Mot3dConfig, sequences: usize) -> Mot3dStatus {
    guard(|| {
        cfg.as_mut().ok_or(Failure::Null("cfg"))?.0.generate.sequences = sequences;
        Ok(())
    })
}

/// A 7-DoF similarity pose: `x -> scale * rotation * x + translation`, with
/// `rotation` row-major.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct Mot3dPose {
    pub scale: f64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<Pose7> for Mot3dPose {
    fn from(p: Pose7) -> Self {
        let mut rotation = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                rotation[3 * r + c] = p.rotation[(r, c)];
            }
        }
        Mot3dPose {
            scale: p.scale,
            rotation,
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

/// Least-squares similarity mapping `noc` points onto `obs` points; both
/// arrays hold `n` packed xyz triples.
///
/// # Safety
/// `noc` and `obs` must point to `3 * n` doubles, `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mot3d_umeyama_fit(
    noc: *const f64,
    obs: *const f64,
    n: usize,
    out: *mut Mot3dPose,
) -> Mot3dStatus {
    guard(|| {
        if noc.is_null() || obs.is_null() {
            return Err(Failure::Null("points"));
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let cloud = |p: *const f64| {
            let flat = std::slice::from_raw_parts(p, 3 * n);
            PointCloud::new(flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
        };
        let corr = Correspondences::new(cloud(noc)?, cloud(obs)?)?;
        *out = umeyama_fit(&corr)?.into();
        Ok(())
    })
}

/// `1 - (misses + false_positives + mismatches) / gt_count`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mot3d_mota(
    misses: usize,
    false_positives: usize,
    mismatches: usize,
    gt_count: usize,
    out: *mut f64,
) -> Mot3dStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = mot3d::eval::mota(misses, false_positives, mismatches, gt_count)?;
        Ok(())
    })
}

/// Simulates `cfg`'s sequences into `dir`.
///
/// # Safety
/// `cfg` must be a live handle and `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn mot3d_generate(cfg: *const Mot3dConfig, dir: *const c_char) -> Mot3dStatus {
    guard(|| {
        let cfg = non_null(cfg, "cfg")?;
        generate_dataset(&cfg.0, &path_arg(dir, "dir")?)?;
        Ok(())
    })
}

/// Loads a trained network from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated path and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mot3d_tracker_load(path: *const c_char, out: *mut *mut Mot3dTracker) -> Mot3dStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let net = Checkpoint::load(&path)?.net()?;
        *out = Box::into_raw(Box::new(Mot3dTracker(net)));
        Ok(())
    })
}

/// # Safety
/// `t` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mot3d_tracker_free(t: *mut Mot3dTracker) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Tracks every sequence of `data_dir` into `out_dir`. A null `tracker`
/// selects the nearest-center heuristic.
///
/// # Safety
/// Handles must be live or null as documented; paths NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mot3d_track(
    cfg: *const Mot3dConfig,
    tracker: *const Mot3dTracker,
    data_dir: *const c_char,
    out_dir: *const c_char,
) -> Mot3dStatus {
    guard(|| {
        let cfg = non_null(cfg, "cfg")?;
        let mode = match tracker.as_ref() {
            Some(t) => Tracker::Gnn(&t.0),
            None => Tracker::Heuristic,
        };
        track_dataset(&path_arg(data_dir, "data_dir")?, &path_arg(out_dir, "out_dir")?, mode, &cfg.0)?;
        Ok(())
    })
}

/// Accumulated scores over a dataset.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct Mot3dSummary {
    pub misses: usize,
    pub false_positives: usize,
    pub mismatches: usize,
    pub matches: usize,
    pub gt_count: usize,
    /// NaN when there is no ground truth.
    pub mota: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Scores the tracklets in `tracklet_dir` against `data_dir`.
///
/// # Safety
/// `cfg` must be a live handle, paths NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mot3d_evaluate(
    cfg: *const Mot3dConfig,
    data_dir: *const c_char,
    tracklet_dir: *const c_char,
    out: *mut Mot3dSummary,
) -> Mot3dStatus {
    guard(|| {
        let cfg = non_null(cfg, "cfg")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let ev = evaluate_dataset(
            &path_arg(data_dir, "data_dir")?,
            &path_arg(tracklet_dir, "tracklet_dir")?,
            cfg.0.eval.radius,
        )?;
        let m = &ev.report.overall;
        *out = Mot3dSummary {
            misses: m.counts.misses,
            false_positives: m.counts.false_positives,
            mismatches: m.counts.mismatches,
            matches: m.counts.matches,
            gt_count: m.counts.gt_count,
            mota: m.mota.unwrap_or(f64::NAN),
            precision: m.prf.precision,
            recall: m.prf.recall,
            f1: m.prf.f1,
        };
        Ok(())
    })
}
