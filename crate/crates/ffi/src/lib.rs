//! C ABI over the `fdgan` crate.
//!
//! Every fallible function returns an [`FdganStatus`]; on failure the
//! message is available from [`fdgan_last_error`] on the same thread.
//! Images cross the boundary as tightly packed RGB8 buffers, row-major,
//! `width * height * 3` bytes. Landmarks are `x, y` pairs of doubles.
//! Generators and matchers are opaque handles released with their `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fdgan::eval::{calibrate_threshold, demorph, EmbeddingMatcher, Matcher};
use fdgan::morph::{morph, MorphParams};
use fdgan::net::Checkpoint;
use fdgan::{Error, LandmarkSet, RasterImage};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FdganStatus {
    Ok = 0,
    InvalidArgument = 1,
    Shape = 2,
    Geometry = 3,
    Io = 4,
    Format = 5,
    InsufficientData = 6,
    Diverged = 7,
    Panic = 8,
}

impl From<&Error> for FdganStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::IncompatibleLandmarks(_) | Error::Parameter(_) | Error::Config(_) => FdganStatus::InvalidArgument,
            Error::Shape(_) => FdganStatus::Shape,
            Error::DegenerateGeometry(_) => FdganStatus::Geometry,
            Error::Io(_) => FdganStatus::Io,
            Error::Format(_) | Error::Json(_) => FdganStatus::Format,
            Error::InsufficientData(_) => FdganStatus::InsufficientData,
            Error::Diverged { .. } => FdganStatus::Diverged,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Module(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Module(e)
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FdganStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FdganStatus::Ok
        }
        Ok(Err(Failure::Module(e))) => {
            let status = FdganStatus::from(&e);
            set_error(e.to_string());
            status
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            FdganStatus::InvalidArgument
        }
        Err(_) => {
            set_error("internal panic".to_string());
            FdganStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<*const T, Failure> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(p)
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<String, Failure> {
    let p = non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure::Module(Error::Parameter(format!("{what} is not UTF-8"))))
}

unsafe fn image_arg(p: *const u8, w: usize, h: usize, what: &'static str) -> Result<RasterImage, Failure> {
    let p = non_null(p, what)?;
    let bytes = std::slice::from_raw_parts(p, w * h * 3);
    Ok(RasterImage::from_rgb8(h, w, bytes)?)
}

unsafe fn landmarks_arg(p: *const f64, n: usize, what: &'static str) -> Result<LandmarkSet, Failure> {
    let p = non_null(p, what)?;
    let flat = std::slice::from_raw_parts(p, 2 * n);
    Ok(LandmarkSet::new(flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())?)
}

unsafe fn write_image(img: &RasterImage, out: *mut u8) {
    let bytes = img.to_rgb8();
    ptr::copy_nonoverlapping(bytes.as_ptr(), out, bytes.len());
}

/// The message of the last failed call on this thread, or NULL. The
/// pointer stays valid until the next call into this library on the same
/// thread.
#[no_mangle]
pub extern "C" fn fdgan_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Morphs two `width × height` faces. Each landmark array holds `n` points
/// (68, 65 or 85). `out` receives `width * height * 3` bytes.
///
/// # Safety
/// All pointers must be valid for the sizes described above.
#[no_mangle]
pub unsafe extern "C" fn fdgan_morph(
    image1: *const u8,
    landmarks1: *const f64,
    n1: usize,
    image2: *const u8,
    landmarks2: *const f64,
    n2: usize,
    width: u32,
    height: u32,
    alpha: f64,
    beta: f64,
    out: *mut u8,
) -> FdganStatus {
    guard(|| {
        let (w, h) = (width as usize, height as usize);
        let i1 = image_arg(image1, w, h, "image1")?;
        let i2 = image_arg(image2, w, h, "image2")?;
        let k1 = landmarks_arg(landmarks1, n1, "landmarks1")?;
        let k2 = landmarks_arg(landmarks2, n2, "landmarks2")?;
        non_null(out, "out")?;
        let m = morph(&i1, &k1, &i2, &k2, MorphParams::new(alpha, beta)?)?;
        write_image(&m, out);
        Ok(())
    })
}

/// A trained generator.
pub struct FdganGenerator {
    checkpoint: Checkpoint,
}

/// Loads a generator checkpoint into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fdgan_generator_load(path: *const c_char, out: *mut *mut FdganGenerator) -> FdganStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        non_null(out, "out")?;
        let checkpoint = Checkpoint::load(path)?;
        checkpoint.store.param("gen.res.out.weight").map_err(|_| {
            Error::Format("checkpoint holds no generator".into())
        })?;
        *out = Box::into_raw(Box::new(FdganGenerator { checkpoint }));
        Ok(())
    })
}

/// Side length of the square images the generator expects, or 0 for NULL.
///
/// # Safety
/// `g` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fdgan_generator_image_size(g: *const FdganGenerator) -> u32 {
    g.as_ref().map_or(0, |g| g.checkpoint.net.image_size as u32)
}

/// Restores the accomplice from the criminal's `aux` image and the morph.
/// All three buffers hold `size * size * 3` bytes.
///
/// # Safety
/// `g` must be a live handle and the buffers valid for the size above.
#[no_mangle]
pub unsafe extern "C" fn fdgan_demorph(
    g: *const FdganGenerator,
    aux: *const u8,
    morphed: *const u8,
    out: *mut u8,
) -> FdganStatus {
    guard(|| {
        let g = non_null(g, "generator")?;
        let g = &*g;
        let s = g.checkpoint.net.image_size;
        let a = image_arg(aux, s, s, "aux")?;
        let m = image_arg(morphed, s, s, "morphed")?;
        non_null(out, "out")?;
        let r = demorph(&g.checkpoint.store, &g.checkpoint.net, &[&a], &[&m])?;
        write_image(&r[0], out);
        Ok(())
    })
}

/// # Safety
/// `g` must be NULL or a handle from [`fdgan_generator_load`], freed once.
#[no_mangle]
pub unsafe extern "C" fn fdgan_generator_free(g: *mut FdganGenerator) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// A calibrated face matcher.
pub struct FdganMatcher {
    matcher: EmbeddingMatcher,
}

/// Loads a matcher checkpoint into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fdgan_matcher_load(path: *const c_char, out: *mut *mut FdganMatcher) -> FdganStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        non_null(out, "out")?;
        let matcher = EmbeddingMatcher::load(path)?;
        *out = Box::into_raw(Box::new(FdganMatcher { matcher }));
        Ok(())
    })
}

/// Side length the matcher's encoder sees, or 0 for NULL. Faces whose side
/// is a multiple of it are box-downsampled before scoring.
///
/// # Safety
/// `m` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fdgan_matcher_image_size(m: *const FdganMatcher) -> u32 {
    m.as_ref().map_or(0, |m| m.matcher.net().image_size as u32)
}

/// Similarity of two `size * size` RGB8 faces; `size` must be a multiple
/// of [`fdgan_matcher_image_size`].
///
/// # Safety
/// `m` must be a live handle, both images `size * size * 3` bytes and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fdgan_matcher_score(
    m: *const FdganMatcher,
    image1: *const u8,
    image2: *const u8,
    size: u32,
    out: *mut f64,
) -> FdganStatus {
    guard(|| {
        let m = &*non_null(m, "matcher")?;
        let s = size as usize;
        let a = image_arg(image1, s, s, "image1")?;
        let b = image_arg(image2, s, s, "image2")?;
        non_null(out, "out")?;
        *out = m.matcher.score(&a, &b)?;
        Ok(())
    })
}

/// The calibrated decision threshold; `-inf` accepts every pair.
///
/// # Safety
/// `m` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fdgan_matcher_threshold(m: *const FdganMatcher, out: *mut f64) -> FdganStatus {
    guard(|| {
        let m = &*non_null(m, "matcher")?;
        non_null(out, "out")?;
        *out = m.matcher.threshold();
        Ok(())
    })
}

/// # Safety
/// `m` must be NULL or a handle from [`fdgan_matcher_load`], freed once.
#[no_mangle]
pub unsafe extern "C" fn fdgan_matcher_free(m: *mut FdganMatcher) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Threshold for a false accept rate `far` over `n` impostor scores.
///
/// # Safety
/// `scores` must hold `n` doubles and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fdgan_calibrate_threshold(
    scores: *const f64,
    n: usize,
    far: f64,
    out: *mut f64,
) -> FdganStatus {
    guard(|| {
        let s = if n == 0 { &[][..] } else { std::slice::from_raw_parts(non_null(scores, "scores")?, n) };
        non_null(out, "out")?;
        *out = calibrate_threshold(s, far)?;
        Ok(())
    })
}
