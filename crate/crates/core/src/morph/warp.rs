//! Piecewise-affine warping by inverse mapping with bilinear sampling.

use crate::error::{Error, Result};
use crate::image::RasterImage;
use crate::landmarks::LandmarkSet;
use crate::morph::delaunay::{signed_area, TriangleMesh, DEGENERATE_AREA};

/// Barycentric slack so pixels exactly on shared edges are not lost.
const INSIDE_EPS: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct Warped {
    pub image: RasterImage,
    /// Destination triangles skipped for having (near) zero area.
    pub skipped_triangles: usize,
}

/// Maps each mesh triangle of `src` (vertices at `k_src`) onto the same
/// triangle at `k_dst`. Every destination pixel inside a triangle is filled
/// by sampling `src` at the affine pre-image of the pixel centre. Pixels not
/// covered by any triangle keep the source value at the same coordinates.
pub fn warp_image(
    src: &RasterImage,
    k_src: &LandmarkSet,
    k_dst: &LandmarkSet,
    mesh: &TriangleMesh,
) -> Result<Warped> {
    if !k_src.is_compatible(k_dst) {
        return Err(Error::IncompatibleLandmarks(format!(
            "{} source vs {} destination landmarks",
            k_src.len(),
            k_dst.len()
        )));
    }
    if let Some(max) = mesh.max_index() {
        if max >= k_src.len() {
            return Err(Error::IncompatibleLandmarks(format!(
                "mesh index {max} out of range for {} landmarks",
                k_src.len()
            )));
        }
    }

    let (h, w) = (src.height(), src.width());
    let mut out = src.data().to_vec();
    let mut covered = vec![false; h * w];
    let mut skipped = 0;
    let (sp, dp) = (k_src.points(), k_dst.points());

    for tri in mesh.triangles() {
        let d = [dp[tri[0]], dp[tri[1]], dp[tri[2]]];
        let s = [sp[tri[0]], sp[tri[1]], sp[tri[2]]];
        let area = signed_area(d[0], d[1], d[2]);
        if area.abs() < DEGENERATE_AREA {
            skipped += 1;
            continue;
        }
        let identity = s == d;

        let xmin = d.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let ymin = d.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let xmax = d.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max).ceil();
        let ymax = d.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max).ceil();
        if xmax < 0.0 || ymax < 0.0 {
            continue;
        }
        let xmax = (xmax as usize).min(w - 1);
        let ymax = (ymax as usize).min(h - 1);

        let inv = 1.0 / (2.0 * area);
        for y in ymin..=ymax {
            for x in xmin..=xmax {
                let idx = y * w + x;
                if covered[idx] {
                    continue;
                }
                let p = [x as f64, y as f64];
                let l0 = 2.0 * signed_area(p, d[1], d[2]) * inv;
                let l1 = 2.0 * signed_area(d[0], p, d[2]) * inv;
                let l2 = 1.0 - l0 - l1;
                if l0 < -INSIDE_EPS || l1 < -INSIDE_EPS || l2 < -INSIDE_EPS {
                    continue;
                }
                covered[idx] = true;
                let rgb = if identity {
                    src.pixel(y, x)
                } else {
                    let sx = l0 * s[0][0] + l1 * s[1][0] + l2 * s[2][0];
                    let sy = l0 * s[0][1] + l1 * s[1][1] + l2 * s[2][1];
                    src.sample_bilinear(sx, sy)
                };
                out[idx * 3..idx * 3 + 3].copy_from_slice(&rgb);
            }
        }
    }

    Ok(Warped { image: RasterImage::from_clamped(h, w, out)?, skipped_triangles: skipped })
}

/// Which pixels fall inside at least one non-degenerate triangle of `mesh`
/// placed at `k`. Uses the same coverage rule as [`warp_image`].
pub fn coverage_mask(k: &LandmarkSet, mesh: &TriangleMesh, w: usize, h: usize) -> Vec<bool> {
    let mut covered = vec![false; h * w];
    let pts = k.points();
    for tri in mesh.triangles() {
        let d = [pts[tri[0]], pts[tri[1]], pts[tri[2]]];
        let area = signed_area(d[0], d[1], d[2]);
        if area.abs() < DEGENERATE_AREA {
            continue;
        }
        let inv = 1.0 / (2.0 * area);
        for y in 0..h {
            for x in 0..w {
                let p = [x as f64, y as f64];
                let l0 = 2.0 * signed_area(p, d[1], d[2]) * inv;
                let l1 = 2.0 * signed_area(d[0], p, d[2]) * inv;
                let l2 = 1.0 - l0 - l1;
                if l0 >= -INSIDE_EPS && l1 >= -INSIDE_EPS && l2 >= -INSIDE_EPS {
                    covered[y * w + x] = true;
                }
            }
        }
    }
    covered
}
