//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use fdgan::tensor::Tensor;
use fdgan::{LandmarkSet, RasterImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform noise image in [-1, 1].
pub fn noise_image(h: usize, w: usize, seed: u64) -> RasterImage {
    let mut r = rng(seed);
    RasterImage::new(h, w, (0..h * w * 3).map(|_| r.gen_range(-1.0..=1.0)).collect()).unwrap()
}

/// Smooth image: a few random sinusoids, so bilinear sampling is well behaved.
pub fn smooth_image(h: usize, w: usize, seed: u64) -> RasterImage {
    let mut r = rng(seed);
    let waves: Vec<[f64; 4]> = (0..9).map(|_| [r.gen_range(0.02..0.2), r.gen_range(0.02..0.2), r.gen_range(0.0..6.3), r.gen_range(0.1..0.3)]).collect();
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v: f64 = waves[c * 3..c * 3 + 3].iter().map(|k| k[3] * (k[0] * x as f64 + k[1] * y as f64 + k[2]).sin()).sum();
                data.push(v.clamp(-1.0, 1.0));
            }
        }
    }
    RasterImage::new(h, w, data).unwrap()
}

pub fn noise_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_points(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<[f64; 2]> {
    let mut r = rng(seed);
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(n);
    while pts.len() < n {
        let p = [r.gen_range(lo..hi), r.gen_range(lo..hi)];
        if pts.iter().all(|q| (q[0] - p[0]).hypot(q[1] - p[1]) > 1e-3) {
            pts.push(p);
        }
    }
    pts
}

pub fn landmarks(pts: &[[f64; 2]]) -> LandmarkSet {
    LandmarkSet::new(pts.to_vec()).unwrap()
}

/// Twice the signed area of `abc`.
pub fn cross(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Whether `p` lies strictly inside the circumcircle of `abc`, with a
/// relative tolerance that treats cocircular points as outside.
pub fn strictly_in_circumcircle(a: [f64; 2], b: [f64; 2], c: [f64; 2], p: [f64; 2]) -> bool {
    let d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]));
    let sq = |q: [f64; 2]| q[0] * q[0] + q[1] * q[1];
    let ux = (sq(a) * (b[1] - c[1]) + sq(b) * (c[1] - a[1]) + sq(c) * (a[1] - b[1])) / d;
    let uy = (sq(a) * (c[0] - b[0]) + sq(b) * (a[0] - c[0]) + sq(c) * (b[0] - a[0])) / d;
    let r = (a[0] - ux).hypot(a[1] - uy);
    (p[0] - ux).hypot(p[1] - uy) < r * (1.0 - 1e-9)
}

/// Points on the convex hull boundary, collinear boundary points included.
pub fn hull_point_count(pts: &[[f64; 2]]) -> usize {
    let mut p = pts.to_vec();
    p.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut hull: Vec<[f64; 2]> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let order: Vec<[f64; 2]> = if pass == 0 { p.clone() } else { p.iter().rev().cloned().collect() };
        for q in order {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    let on_edge = |q: [f64; 2]| {
        (0..hull.len()).any(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            let t = ((q[0] - a[0]) * (b[0] - a[0]) + (q[1] - a[1]) * (b[1] - a[1])) / (len * len);
            cross(a, b, q).abs() <= 1e-9 * len * len && (-1e-12..=1.0 + 1e-12).contains(&t)
        })
    };
    pts.iter().filter(|&&q| on_edge(q)).count()
}

/// Reference bilinear sampling with border replication, pixel centres at
/// integer coordinates.
pub fn bilinear(img: &RasterImage, x: f64, y: f64, c: usize) -> f64 {
    let xc = x.clamp(0.0, (img.width() - 1) as f64);
    let yc = y.clamp(0.0, (img.height() - 1) as f64);
    let (x0, y0) = (xc.floor() as usize, yc.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.width() - 1), (y0 + 1).min(img.height() - 1));
    let (fx, fy) = (xc - x0 as f64, yc - y0 as f64);
    let top = img.get(y0, x0, c) * (1.0 - fx) + img.get(y0, x1, c) * fx;
    let bottom = img.get(y1, x0, c) * (1.0 - fx) + img.get(y1, x1, c) * fx;
    top * (1.0 - fy) + bottom * fy
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
