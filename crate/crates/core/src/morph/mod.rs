//! Automatic face-morph generation: landmark interpolation, Delaunay
//! triangulation of the interpolated landmarks, piecewise-affine warping of
//! both contributors, and pixel blending.

pub mod align;
pub mod delaunay;
pub mod warp;

pub use align::{align_face, align_face_to, fit_similarity, Aligned, Similarity};
pub use delaunay::{triangulate, TriangleMesh};
pub use warp::{warp_image, Warped};

use crate::error::{Error, Result};
use crate::image::RasterImage;
use crate::landmarks::{LandmarkSet, BORDER_POINTS, FACIAL_65, FACIAL_68, MORPH_POINTS};

/// Pixel fusion factor `alpha` and location fusion factor `beta`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MorphParams {
    pub alpha: f64,
    pub beta: f64,
}

impl MorphParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        check_factor("alpha", alpha)?;
        check_factor("beta", beta)?;
        Ok(Self { alpha, beta })
    }
}

fn check_factor(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
        return Err(Error::param(format!("{name} = {v} outside [0, 1]")));
    }
    Ok(())
}

/// Point-wise `(1 − beta)·k1 + beta·k2`.
pub fn interpolate_landmarks(k1: &LandmarkSet, k2: &LandmarkSet, beta: f64) -> Result<LandmarkSet> {
    if !k1.is_compatible(k2) {
        return Err(Error::IncompatibleLandmarks(format!(
            "{} vs {} landmarks",
            k1.len(),
            k2.len()
        )));
    }
    check_factor("beta", beta)?;
    LandmarkSet::new(
        k1.points()
            .iter()
            .zip(k2.points())
            .map(|(p, q)| [(1.0 - beta) * p[0] + beta * q[0], (1.0 - beta) * p[1] + beta * q[1]])
            .collect(),
    )
}

/// The 20 border points of a `w × h` frame: corners plus four points per
/// edge at fifths, walking clockwise from the top-left corner.
pub fn border_landmarks(w: usize, h: usize) -> Vec<[f64; 2]> {
    let (xm, ym) = ((w - 1) as f64, (h - 1) as f64);
    let mut out = Vec::with_capacity(BORDER_POINTS);
    for k in 0..5 {
        out.push([xm * k as f64 / 5.0, 0.0]);
    }
    for k in 0..5 {
        out.push([xm, ym * k as f64 / 5.0]);
    }
    for k in 0..5 {
        out.push([xm * (5 - k) as f64 / 5.0, ym]);
    }
    for k in 0..5 {
        out.push([0.0, ym * (5 - k) as f64 / 5.0]);
    }
    out
}

/// Appends the border points to 65 facial landmarks.
pub fn augment_border_landmarks(facial: &LandmarkSet, w: usize, h: usize) -> Result<LandmarkSet> {
    if facial.len() != FACIAL_65 {
        return Err(Error::IncompatibleLandmarks(format!(
            "expected {FACIAL_65} facial landmarks, got {}",
            facial.len()
        )));
    }
    if w < 2 || h < 2 {
        return Err(Error::param(format!("frame {w}x{h} too small for border landmarks")));
    }
    let mut points = facial.points().to_vec();
    points.extend(border_landmarks(w, h));
    LandmarkSet::new(points)
}

/// Brings a 68-, 65- or 85-point set to the 85-point morphing layout.
pub fn morph_landmarks(k: &LandmarkSet, w: usize, h: usize) -> Result<LandmarkSet> {
    match k.len() {
        FACIAL_68 => augment_border_landmarks(&k.prune_68_to_65()?, w, h),
        FACIAL_65 => augment_border_landmarks(k, w, h),
        MORPH_POINTS => Ok(k.clone()),
        n => Err(Error::IncompatibleLandmarks(format!(
            "expected 68, 65 or 85 landmarks, got {n}"
        ))),
    }
}

/// Per-pixel `(1 − alpha)·i1 + alpha·i2`.
pub fn blend(i1: &RasterImage, i2: &RasterImage, alpha: f64) -> Result<RasterImage> {
    if !i1.same_size(i2) {
        return Err(Error::shape(format!(
            "cannot blend {}x{} with {}x{}",
            i1.height(),
            i1.width(),
            i2.height(),
            i2.width()
        )));
    }
    check_factor("alpha", alpha)?;
    let data = i1
        .data()
        .iter()
        .zip(i2.data())
        .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
        .collect();
    RasterImage::from_clamped(i1.height(), i1.width(), data)
}

/// Morph intermediates, exposed for inspection and testing.
#[derive(Clone, Debug)]
pub struct MorphOutput {
    pub image: RasterImage,
    pub landmarks: LandmarkSet,
    pub mesh: TriangleMesh,
    pub warped1: RasterImage,
    pub warped2: RasterImage,
    pub skipped_triangles: usize,
}

pub fn morph(
    i1: &RasterImage,
    k1: &LandmarkSet,
    i2: &RasterImage,
    k2: &LandmarkSet,
    p: MorphParams,
) -> Result<RasterImage> {
    Ok(morph_detailed(i1, k1, i2, k2, p)?.image)
}

pub fn morph_detailed(
    i1: &RasterImage,
    k1: &LandmarkSet,
    i2: &RasterImage,
    k2: &LandmarkSet,
    p: MorphParams,
) -> Result<MorphOutput> {
    if !i1.same_size(i2) {
        return Err(Error::shape("morph contributors differ in size"));
    }
    let p = MorphParams::new(p.alpha, p.beta)?;
    k1.check_within(i1.width(), i1.height())?;
    k2.check_within(i2.width(), i2.height())?;
    let km = interpolate_landmarks(k1, k2, p.beta)?;
    let mesh = triangulate(&km)?;
    let w1 = warp_image(i1, k1, &km, &mesh)?;
    let w2 = warp_image(i2, k2, &km, &mesh)?;
    let image = blend(&w1.image, &w2.image, p.alpha)?;
    Ok(MorphOutput {
        image,
        landmarks: km,
        mesh,
        skipped_triangles: w1.skipped_triangles + w2.skipped_triangles,
        warped1: w1.image,
        warped2: w2.image,
    })
}
