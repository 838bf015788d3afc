//! C ABI over the simulator.
//!
//! Every function returns a [`PcsStatus`]; on failure the message is kept
//! per thread and read back with [`pcs_last_error`]. Clouds and models are
//! opaque handles owned by the caller and released with their `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use pcsemcom::channel::{capacity, lossless_budget};
use pcsemcom::dataset_io::{load_checkpoint, load_ply, save_ply, Stage};
use pcsemcom::metrics::evaluate;
use pcsemcom::pipeline::{eval_rng, load_model, transmit_once};
use pcsemcom::{Error, PointCloud};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Shape = 5,
    Degenerate = 6,
    Checkpoint = 7,
    Config = 8,
    Numeric = 9,
    Panic = 10,
}

/// A point cloud.
pub struct PcsCloud(PointCloud);

/// A trained model restored from a checkpoint.
pub struct PcsModel {
    model: pcsemcom::codec::Model,
    stage: Stage,
}

/// Quality of a reconstruction against its reference. Infinite PSNR is
/// reported as IEEE infinity.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PcsQuality {
    pub d1_psnr_db: f64,
    pub d2_psnr_db: f64,
    pub d1_psnr_symmetric_db: f64,
    pub d2_psnr_symmetric_db: f64,
    pub e_c2c: f64,
    pub e_c2p: f64,
    pub peak: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PcsStatus {
    match e {
        Error::Parse { .. } => PcsStatus::Parse,
        Error::Io { .. } => PcsStatus::Io,
        Error::Shape(_) => PcsStatus::Shape,
        Error::InvalidArgument(_) => PcsStatus::InvalidArgument,
        Error::Degenerate(_) => PcsStatus::Degenerate,
        Error::Checkpoint(_) => PcsStatus::Checkpoint,
        Error::Config(_) => PcsStatus::Config,
        Error::NonFinite(_) | Error::Diverged { .. } => PcsStatus::Numeric,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PcsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PcsStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            PcsStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            PcsStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidArgument("path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn write_out<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    out.write(v);
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn pcs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Bits per channel use at `snr_db`.
#[no_mangle]
pub extern "C" fn pcs_capacity(snr_db: f64) -> f64 {
    capacity(snr_db)
}

/// Channel symbols needed to deliver `bits` losslessly.
///
/// # Safety
/// `out_symbols` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pcs_lossless_budget(bits: u64, snr_db: f64, p: f64, out_symbols: *mut u64) -> PcsStatus {
    guard(|| write_out(out_symbols, lossless_budget(bits, snr_db, p)?.symbol_use))
}

/// Builds a cloud from `n` interleaved `x, y, z` triples.
///
/// # Safety
/// `xyz` must point to `3 * n` readable doubles; `out` must be valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn pcs_cloud_new(xyz: *const f64, n: usize, out: *mut *mut PcsCloud) -> PcsStatus {
    guard(|| {
        if xyz.is_null() {
            return Err(Fail::Null("xyz"));
        }
        let flat = std::slice::from_raw_parts(xyz, 3 * n);
        let cloud = PointCloud::from_flat(flat)?;
        write_out(out, Box::into_raw(Box::new(PcsCloud(cloud))))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pcs_cloud_load_ply(path: *const c_char, out: *mut *mut PcsCloud) -> PcsStatus {
    guard(|| {
        let cloud = load_ply(path_arg(path)?)?;
        write_out(out, Box::into_raw(Box::new(PcsCloud(cloud))))
    })
}

/// # Safety
/// `cloud` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pcs_cloud_save_ply(cloud: *const PcsCloud, path: *const c_char) -> PcsStatus {
    guard(|| {
        let c = non_null(cloud, "cloud")?;
        save_ply(&c.0, path_arg(path)?)?;
        Ok(())
    })
}

/// Number of points, or 0 for NULL.
///
/// # Safety
/// `cloud` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn pcs_cloud_len(cloud: *const PcsCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.len())
}

/// Copies the coordinates into `xyz`, which holds `capacity` doubles.
///
/// # Safety
/// `cloud` must come from this library; `xyz` must be valid for `capacity`
/// writes.
#[no_mangle]
pub unsafe extern "C" fn pcs_cloud_copy_xyz(cloud: *const PcsCloud, xyz: *mut f64, capacity: usize) -> PcsStatus {
    guard(|| {
        let c = non_null(cloud, "cloud")?;
        if xyz.is_null() {
            return Err(Fail::Null("xyz"));
        }
        let flat = c.0.to_flat();
        if capacity < flat.len() {
            return Err(Error::Shape(format!("buffer holds {capacity} doubles, {} needed", flat.len())).into());
        }
        ptr::copy_nonoverlapping(flat.as_ptr(), xyz, flat.len());
        Ok(())
    })
}

/// # Safety
/// `cloud` must be NULL or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn pcs_cloud_free(cloud: *mut PcsCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// D1/D2 quality of `b` against reference `a`.
///
/// # Safety
/// Both clouds must come from this library; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pcs_evaluate(
    a: *const PcsCloud,
    b: *const PcsCloud,
    normal_k: usize,
    out: *mut PcsQuality,
) -> PcsStatus {
    guard(|| {
        let q = evaluate(&non_null(a, "a")?.0, &non_null(b, "b")?.0, normal_k)?;
        write_out(
            out,
            PcsQuality {
                d1_psnr_db: q.d1_psnr_db,
                d2_psnr_db: q.d2_psnr_db,
                d1_psnr_symmetric_db: q.d1_psnr_symmetric_db,
                d2_psnr_symmetric_db: q.d2_psnr_symmetric_db,
                e_c2c: q.e_c2c,
                e_c2p: q.e_c2p,
                peak: q.peak,
            },
        )
    })
}

/// Restores a model from a checkpoint file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pcs_model_load(path: *const c_char, out: *mut *mut PcsModel) -> PcsStatus {
    guard(|| {
        let ckpt = load_checkpoint(path_arg(path)?)?;
        let model = load_model(&ckpt)?;
        write_out(
            out,
            Box::into_raw(Box::new(PcsModel {
                model,
                stage: ckpt.stage,
            })),
        )
    })
}

/// Points per cloud the model expects, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn pcs_model_points(model: *const PcsModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.cfg.points)
}

/// Sends `cloud` through the model at `snr_db` (infinity for a clean
/// channel) with noise drawn from `seed`, returning the reconstruction.
///
/// # Safety
/// Handles must come from this library; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pcs_model_transmit(
    model: *const PcsModel,
    cloud: *const PcsCloud,
    snr_db: f64,
    seed: u64,
    out: *mut *mut PcsCloud,
) -> PcsStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let c = non_null(cloud, "cloud")?;
        if snr_db.is_nan() {
            return Err(Error::InvalidArgument("snr_db is NaN".into()).into());
        }
        let sample = m.model.sample(c.0.clone())?;
        let mut rng = eval_rng(seed, 0);
        let recon = transmit_once(&m.model, m.stage, &sample, snr_db, &mut rng)?;
        write_out(out, Box::into_raw(Box::new(PcsCloud(recon))))
    })
}

/// # Safety
/// `model` must be NULL or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn pcs_model_free(model: *mut PcsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
