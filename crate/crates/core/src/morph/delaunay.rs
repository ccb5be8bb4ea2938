//! Delaunay triangulation by sweep-hull construction followed by Lawson
//! edge flips. Orientation and in-circle tests use exact predicates, so
//! collinear border points and cocircular quadruples are handled without
//! tolerances.

use std::collections::HashMap;

use robust::{incircle, orient2d, Coord};

use crate::error::{Error, Result};
use crate::landmarks::LandmarkSet;

/// Triangles with |signed area| below this (in px²) count as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-9;

/// Index triples into a [`LandmarkSet`], each counter-clockwise in the
/// orientation of the set they were built from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TriangleMesh {
    triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(triangles: Vec<[usize; 3]>) -> Self {
        Self { triangles }
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.triangles.iter().flat_map(|t| t.iter().copied()).max()
    }
}

#[inline]
fn coord(p: [f64; 2]) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

#[inline]
fn orient(pts: &[[f64; 2]], a: usize, b: usize, c: usize) -> f64 {
    orient2d(coord(pts[a]), coord(pts[b]), coord(pts[c]))
}

/// Signed area of a triangle (positive when counter-clockwise in the
/// x-right/y-up convention).
pub fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

pub fn triangulate(k: &LandmarkSet) -> Result<TriangleMesh> {
    let pts = k.points();
    let n = pts.len();
    if n < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "triangulation needs at least 3 points, got {n}"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        pts[i][0]
            .total_cmp(&pts[j][0])
            .then(pts[i][1].total_cmp(&pts[j][1]))
    });
    if let Some(w) = order.windows(2).find(|w| pts[w[0]] == pts[w[1]]) {
        return Err(Error::DegenerateGeometry(format!(
            "duplicate points {} and {} at {:?}",
            w[0], w[1], pts[w[0]]
        )));
    }

    let apex_pos = (2..n)
        .find(|&i| orient(pts, order[0], order[1], order[i]) != 0.0)
        .ok_or_else(|| Error::DegenerateGeometry("all points are collinear".into()))?;
    let apex = order[apex_pos];

    // The points sorted before the apex are collinear and ordered along
    // their line; fan them to the apex.
    let chain = &order[..apex_pos];
    let apex_left = orient(pts, chain[0], chain[1], apex) > 0.0;
    let mut triangles = Vec::with_capacity(2 * n);
    for w in chain.windows(2) {
        if apex_left {
            triangles.push([w[0], w[1], apex]);
        } else {
            triangles.push([w[1], w[0], apex]);
        }
    }
    let mut hull: Vec<usize> = if apex_left {
        chain.iter().copied().chain([apex]).collect()
    } else {
        chain.iter().rev().copied().chain([apex]).collect()
    };

    for &p in &order[apex_pos + 1..] {
        let len = hull.len();
        let visible: Vec<bool> = (0..len)
            .map(|i| orient(pts, hull[i], hull[(i + 1) % len], p) < 0.0)
            .collect();
        // Every new point is lexicographically largest so far, hence strictly
        // outside the hull, so at least one edge is visible.
        let start = (0..len)
            .find(|&i| visible[i] && !visible[(i + len - 1) % len])
            .ok_or_else(|| Error::DegenerateGeometry("sweep hull lost convexity".into()))?;
        let mut count = 0;
        while visible[(start + count) % len] {
            let a = hull[(start + count) % len];
            let b = hull[(start + count + 1) % len];
            triangles.push([b, a, p]);
            count += 1;
            if count == len {
                break;
            }
        }
        // Vertices strictly inside the visible run leave the hull; p takes
        // their place after the run's first vertex.
        let mut next = Vec::with_capacity(len + 1);
        for step in 0..len {
            let idx = (start + count + step) % len;
            next.push(hull[idx]);
            if idx == start {
                break;
            }
        }
        next.push(p);
        hull = next;
    }

    legalize(pts, &mut triangles);
    Ok(TriangleMesh { triangles })
}

fn third(t: &[usize; 3], a: usize, b: usize) -> usize {
    *t.iter().find(|&&v| v != a && v != b).expect("triangle has three distinct vertices")
}

/// Lawson flips until every interior edge is locally Delaunay.
fn legalize(pts: &[[f64; 2]], triangles: &mut [[usize; 3]]) {
    let mut edges: HashMap<(usize, usize), usize> = HashMap::with_capacity(triangles.len() * 3);
    let mut stack = Vec::with_capacity(triangles.len() * 3);
    for (ti, t) in triangles.iter().enumerate() {
        for e in 0..3 {
            let (a, b) = (t[e], t[(e + 1) % 3]);
            edges.insert((a, b), ti);
            stack.push((a, b));
        }
    }

    while let Some((a, b)) = stack.pop() {
        let (Some(&t1), Some(&t2)) = (edges.get(&(a, b)), edges.get(&(b, a))) else {
            continue;
        };
        let c = third(&triangles[t1], a, b);
        let d = third(&triangles[t2], a, b);
        // (a, b, c) is counter-clockwise; flip if d lies inside its circle.
        if incircle(coord(pts[a]), coord(pts[b]), coord(pts[c]), coord(pts[d])) <= 0.0 {
            continue;
        }
        for t in [t1, t2] {
            let tri = triangles[t];
            for e in 0..3 {
                edges.remove(&(tri[e], tri[(e + 1) % 3]));
            }
        }
        triangles[t1] = [a, d, c];
        triangles[t2] = [d, b, c];
        for t in [t1, t2] {
            let tri = triangles[t];
            for e in 0..3 {
                edges.insert((tri[e], tri[(e + 1) % 3]), t);
            }
        }
        stack.extend([(a, d), (d, b), (b, c), (c, a)]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(points: &[[f64; 2]]) -> LandmarkSet {
        LandmarkSet::new(points.to_vec()).unwrap()
    }

    #[test]
    fn single_triangle() {
        let mesh = triangulate(&set(&[[0.0, 0.0], [4.0, 0.0], [1.0, 3.0]])).unwrap();
        assert_eq!(mesh.len(), 1);
    }

    #[test]
    fn too_few_or_collinear_points_fail() {
        assert!(matches!(
            triangulate(&set(&[[0.0, 0.0], [1.0, 1.0]])),
            Err(Error::DegenerateGeometry(_))
        ));
        assert!(matches!(
            triangulate(&set(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [5.0, 5.0]])),
            Err(Error::DegenerateGeometry(_))
        ));
        assert!(matches!(
            triangulate(&set(&[[0.0, 0.0], [1.0, 1.0], [0.0, 0.0]])),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn collinear_chain_then_apex() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [1.5, -2.0]];
        let mesh = triangulate(&set(&pts)).unwrap();
        assert_eq!(mesh.len(), 3);
        for t in mesh.triangles() {
            assert!(signed_area(pts[t[0]], pts[t[1]], pts[t[2]]) > 0.0);
        }
    }

    #[test]
    fn triangles_are_counter_clockwise() {
        let pts: Vec<[f64; 2]> = (0..30)
            .map(|i| {
                let t = i as f64 * 2.399;
                [50.0 + (i as f64).sqrt() * 8.0 * t.cos(), 50.0 + (i as f64).sqrt() * 8.0 * t.sin()]
            })
            .collect();
        let mesh = triangulate(&set(&pts)).unwrap();
        for t in mesh.triangles() {
            assert!(signed_area(pts[t[0]], pts[t[1]], pts[t[2]]) > DEGENERATE_AREA);
        }
    }
}
