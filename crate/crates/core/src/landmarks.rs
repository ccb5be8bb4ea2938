//! Ordered 2-D landmark sets and their JSON file format.
//!
//! A landmark file is a UTF-8 JSON array of `[x, y]` pairs in pixel
//! coordinates. Order is significant: index `i` refers to the same facial
//! feature in every file.

use std::path::Path;

use crate::error::{Error, Result};

/// Number of points in the standard 68-point facial annotation.
pub const FACIAL_68: usize = 68;
/// Facial points kept for morphing (68 minus the inner upper-lip contour).
pub const FACIAL_65: usize = 65;
/// Points added along the image border.
pub const BORDER_POINTS: usize = 20;
/// Full morphing set: 65 facial plus 20 border points.
pub const MORPH_POINTS: usize = FACIAL_65 + BORDER_POINTS;

/// Inner contour of the upper lip in the 68-point order. These collapse onto
/// the lower inner lip when the mouth is closed and are dropped before
/// morphing.
pub const UPPER_INNER_LIP: [usize; 3] = [61, 62, 63];

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    points: Vec<[f64; 2]>,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::param(format!("non-finite landmark {p:?}")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_compatible(&self, other: &LandmarkSet) -> bool {
        self.points.len() == other.points.len()
    }

    /// Checks `0 <= x < w` and `0 <= y < h` for every point.
    pub fn check_within(&self, w: usize, h: usize) -> Result<()> {
        for p in &self.points {
            if p[0] < 0.0 || p[1] < 0.0 || p[0] >= w as f64 || p[1] >= h as f64 {
                return Err(Error::param(format!("landmark {p:?} outside {w}x{h} image")));
            }
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Result<Self> {
        Self::new(self.points.iter().map(|&p| f(p)).collect())
    }

    /// Drops the three upper-inner-lip points from a 68-point set.
    pub fn prune_68_to_65(&self) -> Result<Self> {
        if self.len() != FACIAL_68 {
            return Err(Error::IncompatibleLandmarks(format!(
                "expected {FACIAL_68} facial landmarks, got {}",
                self.len()
            )));
        }
        let points = self
            .points
            .iter()
            .enumerate()
            .filter(|(i, _)| !UPPER_INNER_LIP.contains(i))
            .map(|(_, p)| *p)
            .collect();
        Ok(Self { points })
    }

    /// Reduces a 68-point set to the five alignment points: eye centres,
    /// nose tip, mouth corners.
    pub fn five_point(&self) -> Result<Self> {
        if self.len() != FACIAL_68 {
            return Err(Error::IncompatibleLandmarks(format!(
                "expected {FACIAL_68} facial landmarks, got {}",
                self.len()
            )));
        }
        let centre = |range: std::ops::Range<usize>| {
            let n = range.len() as f64;
            let (sx, sy) = range.fold((0.0, 0.0), |(sx, sy), i| {
                (sx + self.points[i][0], sy + self.points[i][1])
            });
            [sx / n, sy / n]
        };
        Ok(Self {
            points: vec![
                centre(36..42),
                centre(42..48),
                self.points[30],
                self.points[48],
                self.points[54],
            ],
        })
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let points: Vec<[f64; 2]> = serde_json::from_str(text)?;
        Self::new(points)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.points).expect("finite floats always serialize")
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn indexed_68() -> LandmarkSet {
        LandmarkSet::new((0..68).map(|i| [i as f64, 0.0]).collect()).unwrap()
    }

    #[test]
    fn prune_removes_upper_inner_lip() {
        let pruned = indexed_68().prune_68_to_65().unwrap();
        assert_eq!(pruned.len(), FACIAL_65);
        let xs: Vec<f64> = pruned.points().iter().map(|p| p[0]).collect();
        for i in UPPER_INNER_LIP {
            assert!(!xs.contains(&(i as f64)));
        }
        assert_eq!(xs[60], 60.0);
        assert_eq!(xs[61], 64.0);
    }

    #[test]
    fn prune_rejects_wrong_count() {
        let set = LandmarkSet::new(vec![[0.0, 0.0]; 65]).unwrap();
        assert!(matches!(set.prune_68_to_65(), Err(Error::IncompatibleLandmarks(_))));
    }

    #[test]
    fn json_round_trip() {
        let set = LandmarkSet::new(vec![[1.5, 2.25], [0.1, 3.0]]).unwrap();
        assert_eq!(LandmarkSet::from_json(&set.to_json()).unwrap(), set);
        assert!(LandmarkSet::from_json("[[1.0]]").is_err());
    }

    #[test]
    fn five_point_uses_eye_centres() {
        let five = indexed_68().five_point().unwrap();
        assert_eq!(five.points()[0], [38.5, 0.0]);
        assert_eq!(five.points()[1], [44.5, 0.0]);
        assert_eq!(five.points()[2], [30.0, 0.0]);
    }
}
