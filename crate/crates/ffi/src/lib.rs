//! C ABI for loading trained generators, translating images and computing
//! evaluation metrics.
//!
//! Every fallible function returns a [`Uvcgan2Status`]. On failure the message
//! is available from [`uvcgan2_last_error`] on the same thread until the next
//! failing call. Generators are opaque handles released with
//! [`uvcgan2_generator_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use candle_core::{Device, Tensor};
use nalgebra::DMatrix;
use uvcgan2::evaluation::faithfulness::{pixel_l2, psnr_from_l2, ssim, Planar};
use uvcgan2::evaluation::{fid, kid, KidEstimator};
use uvcgan2::generator::Generator;
use uvcgan2::trainer::{load_generator, Direction};
use uvcgan2::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Uvcgan2Status {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Config = 4,
    Checkpoint = 5,
    Missing = 6,
    Io = 7,
    NonFinite = 8,
    Internal = 9,
    Panic = 10,
}

/// Translation direction of a generator in a checkpoint.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Uvcgan2Direction {
    AToB = 0,
    BToA = 1,
}

/// Opaque generator handle.
pub struct Uvcgan2Generator {
    inner: Generator,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> Uvcgan2Status {
    match e {
        Error::Shape(_) => Uvcgan2Status::Shape,
        Error::InvalidArgument(_) => Uvcgan2Status::InvalidArgument,
        Error::Config(_) | Error::ConfigMismatch { .. } => Uvcgan2Status::Config,
        Error::Checkpoint(_) | Error::Json(_) => Uvcgan2Status::Checkpoint,
        Error::Missing(_) => Uvcgan2Status::Missing,
        Error::Io { .. } | Error::Image(_) => Uvcgan2Status::Io,
        Error::NonFinite { .. } => Uvcgan2Status::NonFinite,
        Error::Tensor(_) => Uvcgan2Status::Internal,
    }
}

/// Runs `f`, records any error or panic and converts it to a status.
fn guard(f: impl FnOnce() -> Result<(), Uvcgan2Status>) -> Uvcgan2Status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Uvcgan2Status::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            Uvcgan2Status::Panic
        }
    }
}

fn fail(e: Error) -> Uvcgan2Status {
    let s = status_of(&e);
    set_last_error(e.to_string());
    s
}

fn invalid(msg: &str) -> Uvcgan2Status {
    set_last_error(msg.to_string());
    Uvcgan2Status::InvalidArgument
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Uvcgan2Status> {
    if p.is_null() {
        set_last_error(format!("{what} is null"));
        Err(Uvcgan2Status::NullPointer)
    } else {
        Ok(())
    }
}

/// Borrows `len` values from `p`; `p` may be null only when `len` is zero.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Uvcgan2Status> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

fn rows(data: &[f64], n: usize, dim: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, dim, data)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn uvcgan2_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version contains NUL"),
    };
    VERSION.as_ptr()
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn uvcgan2_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Loads one generator from a pretraining or training checkpoint. With
/// `use_ema` the averaged weights of a training checkpoint are used.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn uvcgan2_generator_load(
    path: *const c_char,
    direction: Uvcgan2Direction,
    use_ema: bool,
    out: *mut *mut Uvcgan2Generator,
) -> Uvcgan2Status {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not valid UTF-8"))?;
        let dir = match direction {
            Uvcgan2Direction::AToB => Direction::AToB,
            Uvcgan2Direction::BToA => Direction::BToA,
        };
        let (_, g) = load_generator(&PathBuf::from(path), dir, use_ema).map_err(fail)?;
        *out = Box::into_raw(Box::new(Uvcgan2Generator { inner: g }));
        Ok(())
    })
}

/// Input channels, output channels and square image size of a generator.
///
/// # Safety
/// `g` must come from [`uvcgan2_generator_load`]; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn uvcgan2_generator_shape(
    g: *const Uvcgan2Generator,
    in_channels: *mut usize,
    out_channels: *mut usize,
    image_size: *mut usize,
) -> Uvcgan2Status {
    guard(|| {
        non_null(g, "generator")?;
        non_null(in_channels, "in_channels")?;
        non_null(out_channels, "out_channels")?;
        non_null(image_size, "image_size")?;
        let c = (*g).inner.config();
        *in_channels = c.in_channels;
        *out_channels = c.out_channels;
        *image_size = c.image_size;
        Ok(())
    })
}

/// Translates `count` images stored as `[count, in_channels, size, size]`
/// floats in `[-1, 1]` into `output` laid out as `[count, out_channels, size, size]`.
///
/// # Safety
/// `input` and `output` must hold the stated number of floats and must not overlap.
#[no_mangle]
pub unsafe extern "C" fn uvcgan2_generator_translate(
    g: *const Uvcgan2Generator,
    input: *const f32,
    count: usize,
    output: *mut f32,
) -> Uvcgan2Status {
    guard(|| {
        non_null(g, "generator")?;
        if count == 0 {
            return Ok(());
        }
        non_null(output, "output")?;
        let gen = &(*g).inner;
        let c = gen.config();
        let s = c.image_size;
        let xs = slice(input, count * c.in_channels * s * s, "input")?;
        let x = Tensor::from_slice(xs, (count, c.in_channels, s, s), &Device::Cpu).map_err(|e| fail(e.into()))?;
        let y = gen.forward(&x).map_err(fail)?;
        let y = y
            .flatten_all()
            .and_then(|t| t.to_vec1::<f32>())
            .map_err(|e| fail(e.into()))?;
        std::slice::from_raw_parts_mut(output, y.len()).copy_from_slice(&y);
        Ok(())
    })
}

/// Releases a generator. Null is ignored.
///
/// # Safety
/// `g` must come from [`uvcgan2_generator_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uvcgan2_generator_free(g: *mut Uvcgan2Generator) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// FID between two row-major feature sets of `dim` columns.
///
/// # Safety
/// `x` holds `nx * dim` values, `y` holds `ny * dim`, `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn uvcgan2_fid(
    x: *const f64,
    nx: usize,
    y: *const f64,
    ny: usize,
    dim: usize,
    out: *mut f64,
) -> Uvcgan2Status {
    guard(|| {
        non_null(out, "out")?;
        if dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        let xs = rows(slice(x, nx * dim, "x")?, nx, dim);
        let ys = rows(slice(y, ny * dim, "y")?, ny, dim);
        *out = fid(&xs, &ys).map_err(fail)?;
        Ok(())
    })
}

/// KID mean and standard deviation over `n_subsets` subsets of `subset_size`
/// rows, using the paired unbiased estimator.
///
/// # Safety
/// `x` holds `nx * dim` values, `y` holds `ny * dim`, the out pointers are writable.
#[no_mangle]
pub unsafe extern "C" fn uvcgan2_kid(
    x: *const f64,
    nx: usize,
    y: *const f64,
    ny: usize,
    dim: usize,
    subset_size: usize,
    n_subsets: usize,
    seed: u64,
    out_mean: *mut f64,
    out_std: *mut f64,
) -> Uvcgan2Status {
    guard(|| {
        non_null(out_mean, "out_mean")?;
        non_null(out_std, "out_std")?;
        if dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        let xs = rows(slice(x, nx * dim, "x")?, nx, dim);
        let ys = rows(slice(y, ny * dim, "y")?, ny, dim);
        let r = kid(&xs, &ys, subset_size, n_subsets, KidEstimator::PairedU, seed).map_err(fail)?;
        *out_mean = r.mean;
        *out_std = r.std;
        Ok(())
    })
}

unsafe fn planar(p: *const f64, c: usize, h: usize, w: usize, what: &str) -> Result<Planar, Uvcgan2Status> {
    let data = slice(p, c * h * w, what)?.to_vec();
    Planar::new(c, h, w, data).map_err(fail)
}

/// PSNR in dB between two planar `[channels, height, width]` images in `[0, 1]`.
///
/// # Safety
/// `a` and `b` hold `channels * height * width` values, `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn uvcgan2_psnr(
    a: *const f64,
    b: *const f64,
    channels: usize,
    height: usize,
    width: usize,
    out: *mut f64,
) -> Uvcgan2Status {
    guard(|| {
        non_null(out, "out")?;
        let pa = planar(a, channels, height, width, "a")?;
        let pb = planar(b, channels, height, width, "b")?;
        *out = psnr_from_l2(pixel_l2(&pa, &pb).map_err(fail)?);
        Ok(())
    })
}

/// Mean SSIM between two planar `[channels, height, width]` images in `[0, 1]`.
///
/// # Safety
/// `a` and `b` hold `channels * height * width` values, `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn uvcgan2_ssim(
    a: *const f64,
    b: *const f64,
    channels: usize,
    height: usize,
    width: usize,
    out: *mut f64,
) -> Uvcgan2Status {
    guard(|| {
        non_null(out, "out")?;
        let pa = planar(a, channels, height, width, "a")?;
        let pb = planar(b, channels, height, width, "b")?;
        *out = ssim(&pa, &pb).map_err(fail)?;
        Ok(())
    })
}
