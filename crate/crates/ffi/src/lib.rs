//! C interface to checkpoint loading, reconstruction and scoring.
//!
//! Every function returns a [`SpiderStatus`]; on failure the message is
//! available from [`spider_last_error_message`] on the same thread. Handles
//! are opaque and owned by the caller until passed to their `_free` function.

use std::cell::RefCell;
use std::error::Error;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use spider_recon::autodiff::{Checkpoint, Real};
use spider_recon::eval;
use spider_recon::projector::{Projection, ViewPose};
use spider_recon::train::{Precision, Trained};
use spider_recon::volume::{load_intensity, load_labels, save_labels, save_volume, Dims, LabelGrid, VoxelGrid};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpiderStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Compute = 5,
    MissingLabels = 6,
    Panic = 7,
}

/// Geometry and output layout of a loaded model.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpiderModelInfo {
    pub volume_dims: [usize; 3],
    pub volume_spacing: [f64; 3],
    pub pa_detector: [usize; 2],
    pub lat_detector: [usize; 2],
    /// Softmax channels, background included.
    pub classes: usize,
}

/// Scores of a prediction against ground truth. `mean_dice` is NaN when the
/// prediction has no labels.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpiderMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub mean_dice: f64,
}

enum Model {
    F32(Trained<f32>),
    F64(Trained<f64>),
}

/// A trained field.
pub struct SpiderModel {
    inner: Model,
}

/// An intensity grid with optional labels.
pub struct SpiderVolume {
    intensity: VoxelGrid,
    labels: Option<LabelGrid>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SpiderStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn fail(status: SpiderStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Io if any cause is an I/O error, `default` otherwise.
fn classify(default: SpiderStatus) -> impl Fn(Box<dyn Error + Send + Sync>) -> Failure {
    move |e| {
        let mut cur: Option<&(dyn Error + 'static)> = Some(e.as_ref());
        let mut status = default;
        while let Some(c) = cur {
            if c.is::<std::io::Error>() {
                status = SpiderStatus::Io;
            }
            cur = c.source();
        }
        Failure(status, e.to_string())
    }
}

fn boxed<E: Error + Send + Sync + 'static>(e: E) -> Box<dyn Error + Send + Sync> {
    Box::new(e)
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> SpiderStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned()).unwrap_or_else(|| "panic".into());
        Err(fail(SpiderStatus::Panic, msg))
    });
    match outcome {
        Ok(()) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SpiderStatus::Ok
        }
        Err(Failure(status, msg)) => {
            let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
            LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
            status
        }
    }
}

fn path_arg(p: *const c_char, what: &str) -> FfiResult<PathBuf> {
    if p.is_null() {
        return Err(fail(SpiderStatus::NullPointer, format!("{what} is null")));
    }
    let s = unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| fail(SpiderStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn opt_path_arg(p: *const c_char, what: &str) -> FfiResult<Option<PathBuf>> {
    if p.is_null() {
        Ok(None)
    } else {
        path_arg(p, what).map(Some)
    }
}

fn handle<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    unsafe { p.as_ref() }.ok_or_else(|| fail(SpiderStatus::NullPointer, format!("{what} is null")))
}

fn out_ptr<T>(p: *mut T, what: &str) -> FfiResult<&mut T> {
    unsafe { p.as_mut() }.ok_or_else(|| fail(SpiderStatus::NullPointer, format!("{what} is null")))
}

fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if p.is_null() {
        return Err(fail(SpiderStatus::NullPointer, format!("{what} is null")));
    }
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn dims_arg(nx: usize, ny: usize, nz: usize, native: Dims) -> FfiResult<Dims> {
    if nx == 0 && ny == 0 && nz == 0 {
        return Ok(native);
    }
    let d = Dims::new(nx, ny, nz);
    d.validate().map_err(|e| fail(SpiderStatus::InvalidArgument, e.to_string()))?;
    Ok(d)
}

impl Model {
    fn geometry(&self) -> &spider_recon::projector::BiplanarGeometry {
        match self {
            Model::F32(t) => &t.geometry,
            Model::F64(t) => &t.geometry,
        }
    }

    fn classes(&self) -> usize {
        match self {
            Model::F32(t) => t.model.config.classes,
            Model::F64(t) => t.model.config.classes,
        }
    }

    fn reconstruct(&self, pa: &Projection, lat: &Projection, dims: Dims) -> FfiResult<SpiderVolume> {
        fn run<T: Real>(t: &Trained<T>, pa: &Projection, lat: &Projection, dims: Dims) -> FfiResult<SpiderVolume> {
            let (intensity, labels) = t.reconstruct(pa, lat, dims).map_err(|e| classify(SpiderStatus::Compute)(boxed(e)))?;
            Ok(SpiderVolume { intensity, labels: Some(labels) })
        }
        match self {
            Model::F32(t) => run(t, pa, lat, dims),
            Model::F64(t) => run(t, pa, lat, dims),
        }
    }
}

fn projection_from(values: &[f64], pose: ViewPose, detector: spider_recon::projector::DetectorSpec, what: &str) -> FfiResult<Projection> {
    if values.len() != detector.pixels() {
        return Err(fail(SpiderStatus::InvalidArgument, format!("{what} has {} values, detector has {} pixels", values.len(), detector.pixels())));
    }
    Ok(Projection { pose, detector, log_values: values.to_vec() })
}

fn out_slot<'a, T>(out: *mut *mut T) -> FfiResult<&'a mut *mut T> {
    let slot = unsafe { out.as_mut() }.ok_or_else(|| fail(SpiderStatus::NullPointer, "output handle is null"))?;
    *slot = std::ptr::null_mut();
    Ok(slot)
}

fn emit<T>(slot: &mut *mut T, value: T) -> FfiResult<()> {
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn spider_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn spider_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint. Its recorded training precision selects the arithmetic.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn spider_model_load(path: *const c_char, out: *mut *mut SpiderModel) -> SpiderStatus {
    guard(|| {
        let slot = out_slot(out)?;
        let path = path_arg(path, "path")?;
        let ckpt = Checkpoint::load(&path).map_err(|e| classify(SpiderStatus::Format)(boxed(e)))?;
        let precision: Precision = ckpt
            .meta
            .get("train.precision")
            .unwrap_or("f32")
            .parse()
            .map_err(|e| classify(SpiderStatus::Format)(boxed(e)))?;
        let inner = match precision {
            Precision::F32 => Model::F32(Trained::from_checkpoint(&ckpt).map_err(|e| classify(SpiderStatus::Format)(boxed(e)))?),
            Precision::F64 => Model::F64(Trained::from_checkpoint(&ckpt).map_err(|e| classify(SpiderStatus::Format)(boxed(e)))?),
        };
        emit(slot, SpiderModel { inner })
    })
}

/// # Safety
/// `model` must be null or a handle from [`spider_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spider_model_free(model: *mut SpiderModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `info` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn spider_model_info(model: *const SpiderModel, info: *mut SpiderModelInfo) -> SpiderStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let g = m.geometry();
        let v = g.volume;
        *out_ptr(info, "info")? = SpiderModelInfo {
            volume_dims: [v.dims.nx, v.dims.ny, v.dims.nz],
            volume_spacing: [v.spacing.sx, v.spacing.sy, v.spacing.sz],
            pa_detector: [g.detector_pa.nu, g.detector_pa.nv],
            lat_detector: [g.detector_lat.nu, g.detector_lat.nv],
            classes: m.classes(),
        };
        Ok(())
    })
}

/// Reconstructs from two log-domain detector images (u fastest), each sized
/// to the model's detector. Zero `nx`, `ny` and `nz` select the model's grid.
///
/// # Safety
/// `model` must be a live handle, `pa`/`lat` readable for `pa_len`/`lat_len`
/// doubles and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn spider_model_reconstruct(
    model: *const SpiderModel,
    pa: *const f64,
    pa_len: usize,
    lat: *const f64,
    lat_len: usize,
    nx: usize,
    ny: usize,
    nz: usize,
    out: *mut *mut SpiderVolume,
) -> SpiderStatus {
    guard(|| {
        let slot = out_slot(out)?;
        let m = &handle(model, "model")?.inner;
        let g = *m.geometry();
        let pa = projection_from(slice_arg(pa, pa_len, "pa")?, g.pa, g.detector_pa, "pa")?;
        let lat = projection_from(slice_arg(lat, lat_len, "lat")?, g.lat, g.detector_lat, "lat")?;
        let dims = dims_arg(nx, ny, nz, g.volume.dims)?;
        emit(slot, m.reconstruct(&pa, &lat, dims)?)
    })
}

/// As [`spider_model_reconstruct`], reading both projections from files
/// written by the command-line simulator.
///
/// # Safety
/// `model` must be a live handle, the paths NUL-terminated strings and `out`
/// a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn spider_model_reconstruct_files(
    model: *const SpiderModel,
    pa_path: *const c_char,
    lat_path: *const c_char,
    nx: usize,
    ny: usize,
    nz: usize,
    out: *mut *mut SpiderVolume,
) -> SpiderStatus {
    guard(|| {
        let slot = out_slot(out)?;
        let m = &handle(model, "model")?.inner;
        let g = *m.geometry();
        let load = |p: *const c_char, pose: ViewPose, what: &str| -> FfiResult<Projection> {
            Projection::load(&path_arg(p, what)?, pose).map_err(|e| classify(SpiderStatus::Format)(boxed(e)))
        };
        let pa = load(pa_path, g.pa, "pa_path")?;
        let lat = load(lat_path, g.lat, "lat_path")?;
        let dims = dims_arg(nx, ny, nz, g.volume.dims)?;
        emit(slot, m.reconstruct(&pa, &lat, dims)?)
    })
}

/// Loads an intensity grid and, when `labels_path` is not null, its labels.
///
/// # Safety
/// `intensity_path` must be a NUL-terminated string, `labels_path` null or
/// one, and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn spider_volume_load(intensity_path: *const c_char, labels_path: *const c_char, out: *mut *mut SpiderVolume) -> SpiderStatus {
    guard(|| {
        let slot = out_slot(out)?;
        let intensity = load_intensity(&path_arg(intensity_path, "intensity_path")?).map_err(|e| classify(SpiderStatus::Format)(boxed(e)))?;
        let labels = match opt_path_arg(labels_path, "labels_path")? {
            Some(p) => Some(load_labels(&p, None).map_err(|e| classify(SpiderStatus::Format)(boxed(e)))?),
            None => None,
        };
        if let Some(l) = &labels {
            if l.dims != intensity.dims {
                return Err(fail(SpiderStatus::InvalidArgument, format!("labels are {}, intensity is {}", l.dims, intensity.dims)));
            }
        }
        emit(slot, SpiderVolume { intensity, labels })
    })
}

/// Writes the intensity grid and, when `labels_path` is not null, the labels.
///
/// # Safety
/// `volume` must be a live handle and the paths as in [`spider_volume_load`].
#[no_mangle]
pub unsafe extern "C" fn spider_volume_save(volume: *const SpiderVolume, intensity_path: *const c_char, labels_path: *const c_char) -> SpiderStatus {
    guard(|| {
        let v = handle(volume, "volume")?;
        save_volume(&path_arg(intensity_path, "intensity_path")?, &v.intensity).map_err(|e| classify(SpiderStatus::Format)(boxed(e)))?;
        if let Some(p) = opt_path_arg(labels_path, "labels_path")? {
            let l = v.labels.as_ref().ok_or_else(|| fail(SpiderStatus::MissingLabels, "volume has no labels"))?;
            save_labels(&p, l).map_err(|e| classify(SpiderStatus::Format)(boxed(e)))?;
        }
        Ok(())
    })
}

/// # Safety
/// `volume` must be a live handle and `nx`, `ny`, `nz` writable pointers.
#[no_mangle]
pub unsafe extern "C" fn spider_volume_dims(volume: *const SpiderVolume, nx: *mut usize, ny: *mut usize, nz: *mut usize) -> SpiderStatus {
    guard(|| {
        let d = handle(volume, "volume")?.intensity.dims;
        *out_ptr(nx, "nx")? = d.nx;
        *out_ptr(ny, "ny")? = d.ny;
        *out_ptr(nz, "nz")? = d.nz;
        Ok(())
    })
}

/// Copies the intensities (x fastest, then y, then z) into `dst`, which must
/// hold exactly `nx·ny·nz` floats.
///
/// # Safety
/// `volume` must be a live handle and `dst` writable for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn spider_volume_copy_intensity(volume: *const SpiderVolume, dst: *mut f32, len: usize) -> SpiderStatus {
    guard(|| {
        let src = handle(volume, "volume")?.intensity.values();
        copy_out(src, dst, len)
    })
}

/// Copies the labels into `dst`, which must hold exactly `nx·ny·nz` values.
///
/// # Safety
/// `volume` must be a live handle and `dst` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn spider_volume_copy_labels(volume: *const SpiderVolume, dst: *mut u16, len: usize) -> SpiderStatus {
    guard(|| {
        let l = handle(volume, "volume")?.labels.as_ref().ok_or_else(|| fail(SpiderStatus::MissingLabels, "volume has no labels"))?;
        copy_out(l.labels(), dst, len)
    })
}

fn copy_out<T: Copy>(src: &[T], dst: *mut T, len: usize) -> FfiResult<()> {
    if dst.is_null() {
        return Err(fail(SpiderStatus::NullPointer, "destination is null"));
    }
    if len != src.len() {
        return Err(fail(SpiderStatus::InvalidArgument, format!("destination holds {len} values, volume has {}", src.len())));
    }
    unsafe { std::ptr::copy_nonoverlapping(src.as_ptr(), dst, len) };
    Ok(())
}

/// Scores `pred` against `truth`, which must carry labels.
///
/// # Safety
/// `pred` and `truth` must be live handles and `metrics` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn spider_volume_evaluate(pred: *const SpiderVolume, truth: *const SpiderVolume, metrics: *mut SpiderMetrics) -> SpiderStatus {
    guard(|| {
        let (p, t) = (handle(pred, "pred")?, handle(truth, "truth")?);
        let truth_labels = t.labels.as_ref().ok_or_else(|| fail(SpiderStatus::MissingLabels, "truth has no labels"))?;
        let r = eval::evaluate("ffi", "ffi", &p.intensity, p.labels.as_ref(), &t.intensity, truth_labels).map_err(|e| fail(SpiderStatus::InvalidArgument, e.to_string()))?;
        let mean_dice = if p.labels.is_some() { r.mean_dice() } else { f64::NAN };
        *out_ptr(metrics, "metrics")? = SpiderMetrics { psnr: r.psnr, ssim: r.ssim, mean_dice };
        Ok(())
    })
}

/// # Safety
/// `volume` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spider_volume_free(volume: *mut SpiderVolume) {
    if !volume.is_null() {
        drop(Box::from_raw(volume));
    }
}
