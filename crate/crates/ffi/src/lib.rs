//! C ABI over `pixagg`.
//!
//! Objects are opaque handles created by `px_*_new`/`px_*_load` and released
//! with the matching `px_*_free`. Every fallible call returns a [`PxStatus`];
//! on failure a description is available from [`px_last_error`] on the same
//! thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use pixagg::aggregation::{aggregate, OffsetField, RigidGrid, WeightField};
use pixagg::eval::{denoise_any_size, input_with_params};
use pixagg::loss::{anneal_coeff, AnnealSchedule};
use pixagg::metrics;
use pixagg::nn::{checkpoint, PanModel};
use pixagg::noise::{self, NoiseParams};
use pixagg::sampling::{bilinear_sample, trilinear_sample, SamplePoint2, SamplePoint3};
use pixagg::{pxt, Error, Rng, Tensor};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidShape = 2,
    InvalidGrid = 3,
    InvalidInput = 4,
    InvalidParams = 5,
    InvalidPartition = 6,
    NotFound = 7,
    BadMagic = 8,
    Truncated = 9,
    Parse = 10,
    Config = 11,
    Io = 12,
    Panic = 13,
}

/// A float32 tensor.
pub struct PxTensor(Tensor);

/// A seeded random stream.
pub struct PxRng(Rng);

/// A rigid sampling grid.
pub struct PxGrid(RigidGrid);

/// A trained denoising model.
pub struct PxModel(PanModel);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PxStatus {
    match e {
        Error::InvalidShape(_) => PxStatus::InvalidShape,
        Error::InvalidGrid(_) => PxStatus::InvalidGrid,
        Error::InvalidInput(_) => PxStatus::InvalidInput,
        Error::InvalidParams(_) => PxStatus::InvalidParams,
        Error::InvalidPartition(_) => PxStatus::InvalidPartition,
        Error::NotFound { .. } => PxStatus::NotFound,
        Error::BadMagic { .. } => PxStatus::BadMagic,
        Error::Truncated { .. } => PxStatus::Truncated,
        Error::Parse { .. } => PxStatus::Parse,
        Error::Config(_) => PxStatus::Config,
        Error::Io(_) => PxStatus::Io,
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

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PxStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            PxStatus::NullPointer
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
            PxStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn path_of(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Lib(Error::InvalidInput("path is not UTF-8".into())))?;
    Ok(PathBuf::from(s))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `cap` bytes. Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn px_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

// ---------------------------------------------------------------- tensors

/// New tensor of the given shape. `data` may be null for zeros; otherwise it
/// must hold the product of the dimensions in row-major order.
///
/// # Safety
/// `shape` must point to `rank` values; `data`, when not null, to enough
/// floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn px_tensor_new(
    shape: *const usize,
    rank: usize,
    data: *const f32,
    out: *mut *mut PxTensor,
) -> PxStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if shape.is_null() {
            return Err(Fail::Null("shape"));
        }
        let shape = std::slice::from_raw_parts(shape, rank);
        let t = if data.is_null() {
            Tensor::zeros(shape)?
        } else {
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::InvalidShape("dimension product overflows".into()))?;
            Tensor::new(shape, std::slice::from_raw_parts(data, len).to_vec())?
        };
        *out = boxed(PxTensor(t));
        Ok(())
    })
}

/// # Safety
/// `t` must be null or a handle from this library, not freed before.
#[no_mangle]
pub unsafe extern "C" fn px_tensor_free(t: *mut PxTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Rank of the tensor, 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn px_tensor_rank(t: *const PxTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.rank())
}

/// Element count, 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn px_tensor_len(t: *const PxTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.len())
}

/// Writes up to `cap` dimensions into `dims`.
///
/// # Safety
/// `t` must be a live handle and `dims` point to `cap` writable values.
#[no_mangle]
pub unsafe extern "C" fn px_tensor_shape(t: *const PxTensor, dims: *mut usize, cap: usize) -> PxStatus {
    guard(|| {
        let t = deref(t, "tensor")?;
        if dims.is_null() {
            return Err(Fail::Null("dims"));
        }
        if cap < t.0.rank() {
            return Err(Error::InvalidShape(format!("rank {} needs {} slots, got {cap}", t.0.rank(), t.0.rank())).into());
        }
        std::ptr::copy_nonoverlapping(t.0.shape().as_ptr(), dims, t.0.rank());
        Ok(())
    })
}

/// Read-only pointer to the row-major data, valid until the handle is freed.
///
/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn px_tensor_data(t: *const PxTensor) -> *const f32 {
    t.as_ref().map_or(std::ptr::null(), |t| t.0.data().as_ptr())
}

/// Loads a `PXT1` file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn px_tensor_read(path: *const c_char, out: *mut *mut PxTensor) -> PxStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let t = pxt::read(&path_of(path)?)?;
        *out = boxed(PxTensor(t));
        Ok(())
    })
}

/// Writes a `PXT1` file.
///
/// # Safety
/// `t` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn px_tensor_write(t: *const PxTensor, path: *const c_char) -> PxStatus {
    guard(|| {
        let t = deref(t, "tensor")?;
        pxt::write(&path_of(path)?, &t.0)?;
        Ok(())
    })
}

// ---------------------------------------------------------------- rng

/// # Safety
/// Always safe; free the result with [`px_rng_free`].
#[no_mangle]
pub unsafe extern "C" fn px_rng_new(seed: u64) -> *mut PxRng {
    boxed(PxRng(Rng::new(seed)))
}

/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn px_rng_free(r: *mut PxRng) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

// ---------------------------------------------------------------- sampling

/// Bilinear sample of an `h x w` tensor; zero outside.
///
/// # Safety
/// `x` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn px_bilinear_sample(x: *const PxTensor, u: f64, v: f64, out: *mut f32) -> PxStatus {
    guard(|| {
        let x = deref(x, "x")?;
        let out = out_ptr(out, "out")?;
        *out = bilinear_sample(&x.0, SamplePoint2 { u, v })?;
        Ok(())
    })
}

/// Trilinear sample of an `h x w x f` tensor; zero outside.
///
/// # Safety
/// `x` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn px_trilinear_sample(
    x: *const PxTensor,
    u: f64,
    v: f64,
    t: f64,
    out: *mut f32,
) -> PxStatus {
    guard(|| {
        let x = deref(x, "x")?;
        let out = out_ptr(out, "out")?;
        *out = trilinear_sample(&x.0, SamplePoint3 { u, v, t })?;
        Ok(())
    })
}

// ---------------------------------------------------------------- aggregation

/// Rigid grid of `dim` (2 or 3) odd extents.
///
/// # Safety
/// `extents` must point to `dim` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn px_grid_new(dim: usize, extents: *const usize, out: *mut *mut PxGrid) -> PxStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if extents.is_null() {
            return Err(Fail::Null("extents"));
        }
        let g = RigidGrid::new(dim, std::slice::from_raw_parts(extents, dim))?;
        *out = boxed(PxGrid(g));
        Ok(())
    })
}

/// # Safety
/// `g` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn px_grid_free(g: *mut PxGrid) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Number of grid points, 0 for a null handle.
///
/// # Safety
/// `g` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn px_grid_len(g: *const PxGrid) -> usize {
    g.as_ref().map_or(0, |g| g.0.len())
}

/// Weighted sum of deformed-grid samples. `x` is `h x w` or `h x w x f`,
/// `offsets` is `h x w x n x d`, `weights` is `h x w x n`; the result is
/// `h x w`.
///
/// # Safety
/// All handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn px_aggregate(
    x: *const PxTensor,
    grid: *const PxGrid,
    offsets: *const PxTensor,
    weights: *const PxTensor,
    out: *mut *mut PxTensor,
) -> PxStatus {
    guard(|| {
        let (x, g) = (deref(x, "x")?, deref(grid, "grid")?);
        let (o, w) = (deref(offsets, "offsets")?, deref(weights, "weights")?);
        let out = out_ptr(out, "out")?;
        let y = aggregate(
            &x.0,
            &g.0,
            &OffsetField::new(o.0.clone())?,
            &WeightField::new(w.0.clone())?,
        )?;
        *out = boxed(PxTensor(y));
        Ok(())
    })
}

// ---------------------------------------------------------------- noise

/// sRGB gamma curve (input clamped to [0, 1]).
#[no_mangle]
pub extern "C" fn px_gamma(y: f64) -> f64 {
    noise::gamma(y)
}

/// Inverse of [`px_gamma`].
#[no_mangle]
pub extern "C" fn px_inverse_gamma(z: f64) -> f64 {
    noise::inverse(z)
}

/// Adds Gaussian noise of variance `sigma_s * x + sigma_r^2`.
///
/// # Safety
/// `x` and `rng` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn px_add_noise(
    x: *const PxTensor,
    sigma_s: f64,
    sigma_r: f64,
    rng: *mut PxRng,
    out: *mut *mut PxTensor,
) -> PxStatus {
    guard(|| {
        let x = deref(x, "x")?;
        let rng = out_ptr(rng, "rng")?;
        let out = out_ptr(out, "out")?;
        let p = NoiseParams::new(sigma_s, sigma_r)?;
        *out = boxed(PxTensor(noise::add_noise(&x.0, p, &mut rng.0)?));
        Ok(())
    })
}

/// Coefficient `eta * gamma^m` of the annealed group loss.
#[no_mangle]
pub extern "C" fn px_anneal_coeff(eta: f64, gamma: f64, m: u64) -> f64 {
    anneal_coeff(AnnealSchedule::new(eta, gamma, m))
}

// ---------------------------------------------------------------- metrics

/// PSNR in dB (peak 1); identical inputs give +infinity.
///
/// # Safety
/// `a` and `b` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn px_psnr(a: *const PxTensor, b: *const PxTensor, out: *mut f64) -> PxStatus {
    guard(|| {
        let (a, b) = (deref(a, "a")?, deref(b, "b")?);
        *out_ptr(out, "out")? = metrics::psnr(&a.0, &b.0)?;
        Ok(())
    })
}

/// Mean SSIM over 11x11 Gaussian windows.
///
/// # Safety
/// `a` and `b` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn px_ssim(a: *const PxTensor, b: *const PxTensor, out: *mut f64) -> PxStatus {
    guard(|| {
        let (a, b) = (deref(a, "a")?, deref(b, "b")?);
        *out_ptr(out, "out")? = metrics::ssim(&a.0, &b.0)?;
        Ok(())
    })
}

// ---------------------------------------------------------------- models

/// Loads a `PXC1` checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn px_model_load(path: *const c_char, out: *mut *mut PxModel) -> PxStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let c = checkpoint::load(&path_of(path)?)?;
        *out = boxed(PxModel(c.model));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn px_model_free(m: *mut PxModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Frames the model takes (`2 tau + 1`), 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn px_model_frames(m: *const PxModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.config().frames())
}

/// Denoises the reference frame of `frames` (`f x h x w`, linear). Blind
/// models ignore the noise parameters; non-blind models need both to be
/// nonnegative.
///
/// # Safety
/// `m` and `frames` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn px_model_denoise(
    m: *const PxModel,
    frames: *const PxTensor,
    sigma_s: f64,
    sigma_r: f64,
    out: *mut *mut PxTensor,
) -> PxStatus {
    guard(|| {
        let (m, f) = (deref(m, "model")?, deref(frames, "frames")?);
        let out = out_ptr(out, "out")?;
        let cfg = m.0.config();
        if f.0.rank() != 3 || f.0.shape()[0] != cfg.frames() {
            return Err(Error::Config(format!(
                "model takes {} frames, input shape {:?}",
                cfg.frames(),
                f.0.shape()
            ))
            .into());
        }
        let params = if cfg.blind { None } else { Some(NoiseParams::new(sigma_s, sigma_r)?) };
        let input = input_with_params(f.0.clone(), cfg.blind, params)?;
        *out = boxed(PxTensor(denoise_any_size(&m.0, &input)?));
        Ok(())
    })
}
