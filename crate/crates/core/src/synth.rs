//! Procedural face-like identities standing in for a real face corpus.
//!
//! An identity is a vector of geometry and color parameters drawn from its
//! seed. A render applies a per-variation pose, expression and lighting
//! jitter and reports the 68 landmarks analytically, in the usual 68-point
//! layout (jaw, brows, nose, eyes, outer and inner lips).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RasterImage;
use crate::landmarks::LandmarkSet;
use crate::morph::align::{align_face_to, Similarity};

/// Side of the square canvas faces are drawn on before alignment.
pub const RENDER_SIZE: usize = 128;
const CENTER: [f64; 2] = [64.0, 66.0];

/// Seed-derived face parameters, in canvas pixels relative to the face
/// center and RGB values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceParams {
    pub face_half_width: f64,
    pub face_half_height: f64,
    pub jaw_taper: f64,
    pub skin: [f64; 3],
    pub hair: [f64; 3],
    pub hair_volume: f64,
    pub fringe_depth: f64,
    pub fringe_curve: f64,
    pub eye_spacing: f64,
    pub eye_level: f64,
    pub eye_half_width: f64,
    pub eye_openness: f64,
    pub iris: [f64; 3],
    pub brow_thickness: f64,
    pub brow_tilt: f64,
    pub brow_gap: f64,
    pub brow_arch: f64,
    pub nose_length: f64,
    pub nose_half_width: f64,
    pub mouth_gap: f64,
    pub mouth_half_width: f64,
    pub lip_thickness: f64,
    pub lips: [f64; 3],
}

impl FaceParams {
    pub fn sample(rng: &mut impl Rng) -> Self {
        let tone: f64 = rng.gen();
        let light = [0.92, 0.76, 0.64];
        let dark = [0.36, 0.23, 0.15];
        let mut skin = [0.0; 3];
        for c in 0..3 {
            skin[c] = (light[c] * (1.0 - tone) + dark[c] * tone + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0);
        }
        let hair_base: f64 = rng.gen_range(0.02..0.75);
        let hair = [
            (hair_base * rng.gen_range(0.8..1.4)).min(1.0),
            hair_base * rng.gen_range(0.6..1.0),
            hair_base * rng.gen_range(0.3..0.8),
        ];
        let iris = [rng.gen_range(0.05..0.5), rng.gen_range(0.1..0.55), rng.gen_range(0.05..0.6)];
        let lip_shade = rng.gen_range(0.55..0.85);
        let lips = [
            (skin[0] * lip_shade + 0.12).min(1.0),
            skin[1] * lip_shade * rng.gen_range(0.6..0.9),
            skin[2] * lip_shade * rng.gen_range(0.6..1.0),
        ];
        let eye_half_width = rng.gen_range(5.5..8.0);
        Self {
            face_half_width: rng.gen_range(38.0..48.0),
            face_half_height: rng.gen_range(50.0..58.0),
            jaw_taper: rng.gen_range(0.05..0.35),
            skin,
            hair,
            hair_volume: rng.gen_range(0.04..0.22),
            fringe_depth: rng.gen_range(6.0..26.0),
            fringe_curve: rng.gen_range(-8.0..8.0),
            eye_spacing: rng.gen_range(19.0..25.0),
            eye_level: rng.gen_range(-14.0..-9.0),
            eye_half_width,
            eye_openness: rng.gen_range(0.38..0.6),
            iris,
            brow_thickness: rng.gen_range(1.5..4.0),
            brow_tilt: rng.gen_range(-0.2..0.2),
            brow_gap: rng.gen_range(6.0..10.0),
            brow_arch: rng.gen_range(0.0..3.0),
            nose_length: rng.gen_range(16.0..23.0),
            nose_half_width: rng.gen_range(4.0..8.0),
            mouth_gap: rng.gen_range(9.0..13.0),
            mouth_half_width: rng.gen_range(10.0..16.0),
            lip_thickness: rng.gen_range(2.0..4.5),
            lips,
        }
    }

    /// All parameters flattened, in declaration order.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = vec![self.face_half_width, self.face_half_height, self.jaw_taper];
        v.extend(self.skin);
        v.extend(self.hair);
        v.extend([self.hair_volume, self.fringe_depth, self.fringe_curve]);
        v.extend([self.eye_spacing, self.eye_level, self.eye_half_width, self.eye_openness]);
        v.extend(self.iris);
        v.extend([self.brow_thickness, self.brow_tilt, self.brow_gap, self.brow_arch]);
        v.extend([self.nose_length, self.nose_half_width]);
        v.extend([self.mouth_gap, self.mouth_half_width, self.lip_thickness]);
        v.extend(self.lips);
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticIdentity {
    pub seed: u64,
    pub params: FaceParams,
}

impl SyntheticIdentity {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self { seed, params: FaceParams::sample(&mut rng) }
    }
}

/// Per-render nuisance: pose, expression and lighting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Variation {
    pub rotation: f64,
    pub scale: f64,
    pub shift: [f64; 2],
    pub smile: f64,
    pub mouth_open: f64,
    pub eye_open: f64,
    pub brow_raise: f64,
    pub brightness: f64,
    pub background: [f64; 3],
}

impl Variation {
    pub fn from_seed(identity_seed: u64, variation: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(identity_seed);
        rng.set_stream(variation.wrapping_add(1));
        let gray = rng.gen_range(0.25..0.7);
        Self {
            rotation: rng.gen_range(-2.0f64..2.0).to_radians(),
            scale: 1.0 + rng.gen_range(-0.02..0.02),
            shift: [rng.gen_range(-1.3..1.3), rng.gen_range(-1.3..1.3)],
            smile: rng.gen_range(-1.0..2.5),
            mouth_open: rng.gen_range(0.0..2.5),
            eye_open: rng.gen_range(0.85..1.12),
            brow_raise: rng.gen_range(-1.2..1.2),
            brightness: rng.gen_range(-0.06..0.06),
            background: [gray + rng.gen_range(-0.04..0.04), gray, gray + rng.gen_range(-0.04..0.04)],
        }
    }

    /// Face space to canvas.
    fn transform(&self) -> Similarity {
        let (a, b) = (self.scale * self.rotation.cos(), self.scale * self.rotation.sin());
        Similarity { a, b, tx: CENTER[0] + self.shift[0], ty: CENTER[1] + self.shift[1] }
    }
}

/// Face geometry after applying expression, in face space.
struct Geometry<'a> {
    p: &'a FaceParams,
    eye_half_height: f64,
    brow_y: f64,
    nose_tip: f64,
    mouth_y: f64,
    smile: f64,
    mouth_open: f64,
    fringe_y: f64,
}

impl<'a> Geometry<'a> {
    fn new(p: &'a FaceParams, v: &Variation) -> Self {
        let eye_half_height = p.eye_half_width * p.eye_openness * v.eye_open;
        let brow_y = p.eye_level - p.brow_gap - v.brow_raise;
        let nose_tip = p.eye_level + p.nose_length;
        let fringe_y = (-p.face_half_height + p.fringe_depth).min(brow_y - p.brow_thickness - 3.0);
        Self {
            p,
            eye_half_height,
            brow_y,
            nose_tip,
            mouth_y: nose_tip + p.mouth_gap,
            smile: v.smile,
            mouth_open: v.mouth_open,
            fringe_y,
        }
    }

    fn jaw_point(&self, phi: f64) -> [f64; 2] {
        let s = phi.sin();
        let taper = 1.0 - self.p.jaw_taper * s.max(0.0);
        [self.p.face_half_width * phi.cos() * taper, self.p.face_half_height * s]
    }

    /// Brow center line; `side` is -1 for the image-left brow.
    fn brow_at(&self, side: f64, t: f64) -> [f64; 2] {
        let len = self.p.eye_half_width * 1.25;
        let cx = side * self.p.eye_spacing;
        let y = self.brow_y - self.p.brow_arch * (1.0 - t * t) - side * self.p.brow_tilt * len * t;
        [cx + t * len, y]
    }

    fn mouth_curve(&self, t: f64) -> f64 {
        self.mouth_y - self.smile * t * t
    }

    fn outer_upper(&self, t: f64) -> f64 {
        self.mouth_curve(t) - (0.5 * self.mouth_open + self.p.lip_thickness) * (1.0 - t * t)
    }

    fn outer_lower(&self, t: f64) -> f64 {
        self.mouth_curve(t) + (0.5 * self.mouth_open + self.p.lip_thickness * 1.2) * (1.0 - t * t)
    }

    fn inner_upper(&self, t: f64) -> f64 {
        self.mouth_curve(t) - 0.5 * self.mouth_open * (1.0 - t * t)
    }

    fn inner_lower(&self, t: f64) -> f64 {
        self.mouth_curve(t) + 0.5 * self.mouth_open * (1.0 - t * t)
    }

    fn landmarks(&self) -> Vec<[f64; 2]> {
        let p = self.p;
        let mut pts = Vec::with_capacity(68);
        for i in 0..17 {
            pts.push(self.jaw_point(std::f64::consts::PI * (1.0 - i as f64 / 16.0)));
        }
        for t in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            pts.push(self.brow_at(-1.0, t));
        }
        for t in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            pts.push(self.brow_at(1.0, t));
        }
        for k in 0..4 {
            pts.push([0.0, p.eye_level + (self.nose_tip - p.eye_level) * k as f64 / 3.0]);
        }
        for k in -2..=2 {
            let u = k as f64 / 2.0;
            pts.push([u * p.nose_half_width, self.nose_tip + 2.5 - 0.8 * u * u]);
        }
        let (ew, eh) = (p.eye_half_width, self.eye_half_height);
        let rise = eh * (1.0f64 - 1.0 / 9.0).sqrt();
        let eye = |cx: f64| {
            [
                [cx - ew, p.eye_level],
                [cx - ew / 3.0, p.eye_level - rise],
                [cx + ew / 3.0, p.eye_level - rise],
                [cx + ew, p.eye_level],
                [cx + ew / 3.0, p.eye_level + rise],
                [cx - ew / 3.0, p.eye_level + rise],
            ]
        };
        pts.extend(eye(-p.eye_spacing));
        pts.extend(eye(p.eye_spacing));
        let mw = p.mouth_half_width;
        pts.push([-mw, self.mouth_curve(1.0)]);
        for t in [-2.0 / 3.0, -1.0 / 3.0, 0.0, 1.0 / 3.0, 2.0 / 3.0] {
            pts.push([t * mw, self.outer_upper(t)]);
        }
        pts.push([mw, self.mouth_curve(1.0)]);
        for t in [2.0 / 3.0, 1.0 / 3.0, 0.0, -1.0 / 3.0, -2.0 / 3.0] {
            pts.push([t * mw, self.outer_lower(t)]);
        }
        pts.push([-0.85 * mw, self.mouth_curve(0.85)]);
        for t in [-0.45, 0.0, 0.45] {
            pts.push([t * mw, self.inner_upper(t)]);
        }
        pts.push([0.85 * mw, self.mouth_curve(0.85)]);
        for t in [0.45, 0.0, -0.45] {
            pts.push([t * mw, self.inner_lower(t)]);
        }
        pts
    }

    /// RGB in `[0, 1]` at face-space point `(u, v)`; `px` is the size of one
    /// canvas pixel in face units.
    fn shade(&self, u: f64, v: f64, px: f64, background: [f64; 3]) -> [f64; 3] {
        let p = self.p;
        let cover = |d: f64| (d / px + 0.5).clamp(0.0, 1.0);
        let mut col = background;

        let (ha, hb) = (p.face_half_width * (1.0 + p.hair_volume), p.face_half_height * (1.0 + 0.6 * p.hair_volume));
        let hv = v + p.hair_volume * 10.0;
        let rho = ((u / ha).powi(2) + (hv / hb).powi(2)).sqrt();
        let hair_back = cover((1.0 - rho) * ha.min(hb)) * cover(p.eye_level + 6.0 - v);
        mix(&mut col, p.hair, hair_back);

        let s = (v / p.face_half_height).clamp(-1.0, 1.0);
        let taper = 1.0 - p.jaw_taper * s.max(0.0);
        let rho = ((u / (p.face_half_width * taper)).powi(2) + (v / p.face_half_height).powi(2)).sqrt();
        let face = cover((1.0 - rho) * p.face_half_width.min(p.face_half_height));
        let shade = 1.0 - 0.12 * (u / p.face_half_width).powi(2);
        mix(&mut col, p.skin.map(|c| c * shade), face);

        let fringe_line = self.fringe_y + p.fringe_curve * (u / p.face_half_width).powi(2);
        mix(&mut col, p.hair, face * cover(fringe_line - v));

        for side in [-1.0, 1.0] {
            let len = p.eye_half_width * 1.25;
            let t = (u - side * p.eye_spacing) / len;
            if t.abs() < 1.2 {
                let [_, y] = self.brow_at(side, t.clamp(-1.0, 1.0));
                let half = 0.5 * p.brow_thickness * (1.0 - 0.35 * t * t);
                let a = cover(half - (v - y).abs()) * cover((1.0 - t.abs()) * len);
                mix(&mut col, p.hair.map(|c| c * 0.8), a);
            }
        }

        let (ew, eh) = (p.eye_half_width, self.eye_half_height);
        for side in [-1.0, 1.0] {
            let cx = side * p.eye_spacing;
            let (du, dv) = (u - cx, v - p.eye_level);
            let rho = ((du / ew).powi(2) + (dv / eh).powi(2)).sqrt();
            let sclera = cover((1.0 - rho) * eh);
            if sclera > 0.0 {
                mix(&mut col, [0.93, 0.93, 0.9], sclera);
                let r = (0.95 * eh).min(0.55 * ew);
                let d = (du * du + dv * dv).sqrt();
                mix(&mut col, p.iris, sclera * cover(r - d));
                mix(&mut col, [0.03, 0.03, 0.03], sclera * cover(0.45 * r - d));
            }
        }

        for side in [-1.0, 1.0] {
            let (du, dv) = (u - side * 0.55 * p.nose_half_width, v - self.nose_tip - 1.2);
            let rho = ((du / 2.0).powi(2) + (dv / 1.2).powi(2)).sqrt();
            mix(&mut col, p.skin.map(|c| c * 0.45), 0.8 * cover((1.0 - rho) * 1.2));
        }
        let tn = u / (p.nose_half_width * 1.1);
        if tn.abs() < 1.0 {
            let y = self.nose_tip + 2.5 - 0.8 * tn * tn;
            mix(&mut col, p.skin.map(|c| c * 0.7), 0.6 * cover(0.7 - (v - y).abs()));
        }
        let bridge = cover(0.6 - (u - 0.35 * p.nose_half_width).abs()) * cover(v - p.eye_level - 4.0) * cover(self.nose_tip - v);
        mix(&mut col, p.skin.map(|c| c * 0.85), 0.7 * bridge);

        let t = u / p.mouth_half_width;
        if t.abs() < 1.1 {
            let tc = t.clamp(-1.0, 1.0);
            let side = cover((1.0 - t.abs()) * p.mouth_half_width);
            let lips = side * cover(v - self.outer_upper(tc)) * cover(self.outer_lower(tc) - v);
            mix(&mut col, p.lips, lips);
            let inner = side * cover(v - self.inner_upper(tc)) * cover(self.inner_lower(tc) - v);
            mix(&mut col, [0.15, 0.05, 0.05], inner);
            let seam = side * cover(0.5 - (v - self.mouth_curve(tc)).abs());
            mix(&mut col, p.lips.map(|c| c * 0.55), seam);
        }
        col
    }
}

fn mix(col: &mut [f64; 3], over: [f64; 3], a: f64) {
    for c in 0..3 {
        col[c] += (over[c] - col[c]) * a;
    }
}

/// Draws `identity` under `variation` on a [`RENDER_SIZE`] canvas.
pub fn render_synthetic_face(identity: &SyntheticIdentity, variation: u64) -> Result<(RasterImage, LandmarkSet)> {
    let var = Variation::from_seed(identity.seed, variation);
    let geo = Geometry::new(&identity.params, &var);
    let to_canvas = var.transform();
    let to_face = to_canvas.inverse();
    let px = 1.0 / to_canvas.scale();
    let n = RENDER_SIZE;
    let mut data = Vec::with_capacity(n * n * 3);
    for y in 0..n {
        for x in 0..n {
            let [u, v] = to_face.apply([x as f64, y as f64]);
            let rgb = geo.shade(u, v, px, var.background);
            data.extend(rgb.map(|c| (2.0 * c - 1.0 + 2.0 * var.brightness).clamp(-1.0, 1.0)));
        }
    }
    let image = RasterImage::new(n, n, data)?;
    let landmarks = LandmarkSet::new(geo.landmarks().into_iter().map(|p| to_canvas.apply(p)).collect())?;
    Ok((image, landmarks))
}

/// A render aligned to a `size × size` frame, with its landmarks in that
/// frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticFace {
    pub image: RasterImage,
    pub landmarks: LandmarkSet,
}

/// Renders and aligns by the five-point template. The canvas is aligned at
/// twice the output size and box-filtered down.
pub fn render_aligned(identity: &SyntheticIdentity, variation: u64, size: usize) -> Result<SyntheticFace> {
    if size < 8 {
        return Err(Error::param(format!("aligned size {size} is too small")));
    }
    let (img, lm) = render_synthetic_face(identity, variation)?;
    let aligned = align_face_to(&img, &lm.five_point()?, 2 * size)?;
    let image = aligned.image.downsample(2)?;
    let hi = (size - 1) as f64;
    let landmarks = lm.map(|p| {
        let [x, y] = aligned.transform.apply(p);
        [((x - 0.5) / 2.0).clamp(0.0, hi), ((y - 0.5) / 2.0).clamp(0.0, hi)]
    })?;
    Ok(SyntheticFace { image, landmarks })
}
