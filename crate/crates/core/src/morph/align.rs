//! Five-point face alignment with a least-squares similarity transform.

use crate::error::{Error, Result};
use crate::image::RasterImage;
use crate::landmarks::LandmarkSet;

/// Output frame of [`align_face`].
pub const ALIGNED_SIZE: usize = 128;

/// Canonical positions in a 128×128 frame: left eye, right eye, nose tip,
/// left and right mouth corner. The eye line sits at 40% height and the
/// eyes are 50 px apart.
pub const CANONICAL_128: [[f64; 2]; 5] = [
    [39.0, 51.2],
    [89.0, 51.2],
    [64.0, 72.0],
    [44.0, 92.0],
    [84.0, 92.0],
];

/// Canonical template scaled to a `size × size` frame.
pub fn canonical_template(size: usize) -> [[f64; 2]; 5] {
    let s = size as f64 / ALIGNED_SIZE as f64;
    CANONICAL_128.map(|p| [p[0] * s, p[1] * s])
}

/// `x' = a·x − b·y + tx`, `y' = b·x + a·y + ty`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Similarity {
    pub const IDENTITY: Similarity = Similarity { a: 1.0, b: 0.0, tx: 0.0, ty: 0.0 };

    pub fn scale(&self) -> f64 {
        self.a.hypot(self.b)
    }

    pub fn angle(&self) -> f64 {
        self.b.atan2(self.a)
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.a * p[0] - self.b * p[1] + self.tx,
            self.b * p[0] + self.a * p[1] + self.ty,
        ]
    }

    pub fn inverse(&self) -> Similarity {
        let d = self.a * self.a + self.b * self.b;
        let (a, b) = (self.a / d, -self.b / d);
        Similarity { a, b, tx: -(a * self.tx - b * self.ty), ty: -(b * self.tx + a * self.ty) }
    }
}

/// Least-squares similarity mapping `src[i]` onto `dst[i]`.
pub fn fit_similarity(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<Similarity> {
    if src.len() != dst.len() || src.len() < 2 {
        return Err(Error::IncompatibleLandmarks(format!(
            "similarity fit needs two equal sets of at least 2 points, got {} and {}",
            src.len(),
            dst.len()
        )));
    }
    let n = src.len() as f64;
    let mean = |pts: &[[f64; 2]]| {
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
        [sx / n, sy / n]
    };
    let (ms, md) = (mean(src), mean(dst));
    let (mut norm, mut dot, mut cross) = (0.0, 0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let (sx, sy) = (s[0] - ms[0], s[1] - ms[1]);
        let (dx, dy) = (d[0] - md[0], d[1] - md[1]);
        norm += sx * sx + sy * sy;
        dot += sx * dx + sy * dy;
        cross += sx * dy - sy * dx;
    }
    if norm < 1e-12 {
        return Err(Error::DegenerateGeometry("source landmarks coincide".into()));
    }
    let (a, b) = (dot / norm, cross / norm);
    if a.hypot(b) < 1e-12 {
        return Err(Error::DegenerateGeometry("destination landmarks coincide".into()));
    }
    Ok(Similarity { a, b, tx: md[0] - (a * ms[0] - b * ms[1]), ty: md[1] - (b * ms[0] + a * ms[1]) })
}

/// Ratio of the smaller to the larger principal spread of a point set.
fn spread_ratio(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let (hi, lo) = (tr / 2.0 + disc, tr / 2.0 - disc);
    if hi <= 0.0 {
        0.0
    } else {
        lo.max(0.0) / hi
    }
}

#[derive(Clone, Debug)]
pub struct Aligned {
    pub image: RasterImage,
    /// Maps input coordinates to aligned-frame coordinates.
    pub transform: Similarity,
}

/// Aligns to the 128×128 canonical frame.
pub fn align_face(img: &RasterImage, five_points: &LandmarkSet) -> Result<RasterImage> {
    Ok(align_face_to(img, five_points, ALIGNED_SIZE)?.image)
}

/// Aligns `img` so its five landmarks land on the canonical template scaled
/// to `size × size`. Samples outside the input replicate its border.
pub fn align_face_to(img: &RasterImage, five_points: &LandmarkSet, size: usize) -> Result<Aligned> {
    if five_points.len() != 5 {
        return Err(Error::IncompatibleLandmarks(format!(
            "alignment needs 5 landmarks, got {}",
            five_points.len()
        )));
    }
    if size == 0 {
        return Err(Error::param("aligned size must be positive"));
    }
    if spread_ratio(five_points.points()) < 1e-6 {
        return Err(Error::DegenerateGeometry("alignment landmarks are collinear".into()));
    }
    let template = canonical_template(size);
    let transform = fit_similarity(five_points.points(), &template)?;
    let inv = transform.inverse();
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let [sx, sy] = inv.apply([x as f64, y as f64]);
            data.extend_from_slice(&img.sample_bilinear(sx, sy));
        }
    }
    Ok(Aligned { image: RasterImage::from_clamped(size, size, data)?, transform })
}
