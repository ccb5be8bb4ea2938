mod common;

use common::*;
use fdgan::morph::align::{canonical_template, fit_similarity, CANONICAL_128};
use fdgan::morph::warp::coverage_mask;
use fdgan::morph::{
    align_face, align_face_to, augment_border_landmarks, blend, interpolate_landmarks, morph, morph_detailed,
    morph_landmarks, triangulate, warp_image, MorphParams, TriangleMesh,
};
use fdgan::synth::{render_aligned, SyntheticIdentity};
use fdgan::{Error, RasterImage};

fn synthetic_pair(size: usize) -> (fdgan::synth::SyntheticFace, fdgan::synth::SyntheticFace) {
    let a = render_aligned(&SyntheticIdentity::from_seed(3), 0, size).unwrap();
    let b = render_aligned(&SyntheticIdentity::from_seed(8), 0, size).unwrap();
    (a, b)
}

#[test]
fn interpolation_examples() {
    let k = interpolate_landmarks(&landmarks(&[[0.0, 0.0]]), &landmarks(&[[10.0, 20.0]]), 0.5).unwrap();
    assert_eq!(k.points(), &[[5.0, 10.0]]);
    let k1 = landmarks(&random_points(7, 0.0, 50.0, 1));
    let k2 = landmarks(&random_points(7, 0.0, 50.0, 2));
    assert_eq!(interpolate_landmarks(&k1, &k2, 0.0).unwrap(), k1);
    let k = interpolate_landmarks(&landmarks(&[[2.0, 4.0]]), &landmarks(&[[6.0, 8.0]]), 0.25).unwrap();
    assert_eq!(k.points(), &[[3.0, 5.0]]);
}

#[test]
fn interpolation_errors() {
    let k1 = landmarks(&[[0.0, 0.0]]);
    let k2 = landmarks(&[[0.0, 0.0], [1.0, 1.0]]);
    assert!(matches!(interpolate_landmarks(&k1, &k2, 0.5), Err(Error::IncompatibleLandmarks(_))));
    assert!(matches!(interpolate_landmarks(&k1, &k1, 1.5), Err(Error::Parameter(_))));
}

#[test]
fn border_augmentation_examples() {
    let facial = landmarks(&random_points(65, 10.0, 110.0, 4));
    let k = augment_border_landmarks(&facial, 128, 128).unwrap();
    assert_eq!(k.len(), 85);
    assert_eq!(&k.points()[..65], facial.points());
    for p in &k.points()[65..] {
        let on_edge = p[0] == 0.0 || p[0] == 127.0 || p[1] == 0.0 || p[1] == 127.0;
        assert!(on_edge, "{p:?} is not on the border");
    }
    for corner in [[0.0, 0.0], [127.0, 0.0], [0.0, 127.0], [127.0, 127.0]] {
        assert!(k.points()[65..].contains(&corner));
    }
    assert_eq!(augment_border_landmarks(&facial, 128, 128).unwrap(), k);
    let short = landmarks(&random_points(64, 10.0, 110.0, 4));
    assert!(matches!(augment_border_landmarks(&short, 128, 128), Err(Error::IncompatibleLandmarks(_))));
}

#[test]
fn three_points_make_one_triangle() {
    let mesh = triangulate(&landmarks(&[[0.0, 0.0], [4.0, 0.0], [1.0, 3.0]])).unwrap();
    assert_eq!(mesh.len(), 1);
}

#[test]
fn unit_square_has_two_delaunay_triangles() {
    let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    let mesh = triangulate(&landmarks(&pts)).unwrap();
    assert_eq!(mesh.len(), 2);
    for t in mesh.triangles() {
        for (i, p) in pts.iter().enumerate() {
            if !t.contains(&i) {
                assert!(!strictly_in_circumcircle(pts[t[0]], pts[t[1]], pts[t[2]], *p));
            }
        }
    }
}

#[test]
fn full_morph_set_has_148_triangles() {
    let face = render_aligned(&SyntheticIdentity::from_seed(8), 0, 128).unwrap();
    let k = morph_landmarks(&face.landmarks, 128, 128).unwrap();
    assert_eq!(k.len(), 85);
    assert_eq!(hull_point_count(k.points()), 20);
    let mesh = triangulate(&k).unwrap();
    assert_eq!(mesh.len(), 2 * 85 - 20 - 2);
    let pts = k.points();
    for t in mesh.triangles() {
        assert!(cross(pts[t[0]], pts[t[1]], pts[t[2]]).abs() > 0.0);
        for (i, p) in pts.iter().enumerate() {
            if !t.contains(&i) {
                assert!(!strictly_in_circumcircle(pts[t[0]], pts[t[1]], pts[t[2]], *p), "point {i} inside {t:?}");
            }
        }
    }
}

#[test]
fn facial_points_on_the_frame_edge_join_the_hull() {
    let face = render_aligned(&SyntheticIdentity::from_seed(3), 0, 128).unwrap();
    let k = morph_landmarks(&face.landmarks, 128, 128).unwrap();
    let h = hull_point_count(k.points());
    assert!(h > 20);
    assert_eq!(triangulate(&k).unwrap().len(), 2 * 85 - h - 2);
}

#[test]
fn degenerate_point_sets_fail() {
    assert!(matches!(triangulate(&landmarks(&[[0.0, 0.0], [1.0, 1.0]])), Err(Error::DegenerateGeometry(_))));
    let line: Vec<[f64; 2]> = (0..6).map(|i| [i as f64, 2.0 * i as f64]).collect();
    assert!(matches!(triangulate(&landmarks(&line)), Err(Error::DegenerateGeometry(_))));
}

#[test]
fn identity_warp_reproduces_the_source_inside_the_mesh() {
    let img = smooth_image(40, 40, 5);
    let mut pts = random_points(12, 3.0, 36.0, 6);
    pts.extend([[0.0, 0.0], [39.0, 0.0], [0.0, 39.0], [39.0, 39.0]]);
    let k = landmarks(&pts);
    let mesh = triangulate(&k).unwrap();
    let out = warp_image(&img, &k, &k, &mesh).unwrap();
    assert_eq!(out.skipped_triangles, 0);
    let inside = coverage_mask(&k, &mesh, 40, 40);
    for (i, &covered) in inside.iter().enumerate() {
        if covered {
            for c in 0..3 {
                assert!((out.image.data()[i * 3 + c] - img.data()[i * 3 + c]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn integer_translation_shifts_interior_pixels() {
    let img = smooth_image(48, 48, 7);
    let src = landmarks(&random_points(10, 8.0, 30.0, 8));
    let (dx, dy) = (5.0, 3.0);
    let dst = src.map(|p| [p[0] + dx, p[1] + dy]).unwrap();
    let mesh = triangulate(&src).unwrap();
    let out = warp_image(&img, &src, &dst, &mesh).unwrap().image;
    let inside = coverage_mask(&dst, &mesh, 48, 48);
    let mut checked = 0;
    for y in 0..48 {
        for x in 0..48 {
            if inside[y * 48 + x] {
                for c in 0..3 {
                    let want = img.get(y - dy as usize, x - dx as usize, c);
                    assert!((out.get(y, x, c) - want).abs() < 1e-9, "({x},{y})");
                }
                checked += 1;
            }
        }
    }
    assert!(checked > 50);
}

#[test]
fn scaled_triangle_matches_bilinear_oracle() {
    let img = smooth_image(64, 64, 9);
    let src = landmarks(&[[4.0, 5.0], [28.0, 7.0], [12.0, 27.0]]);
    let dst = src.map(|p| [2.0 * p[0], 2.0 * p[1]]).unwrap();
    let mesh = TriangleMesh::new(vec![[0, 1, 2]]);
    let out = warp_image(&img, &src, &dst, &mesh).unwrap().image;
    let inside = coverage_mask(&dst, &mesh, 64, 64);
    for y in 0..64 {
        for x in 0..64 {
            if inside[y * 64 + x] {
                for c in 0..3 {
                    let want = bilinear(&img, x as f64 / 2.0, y as f64 / 2.0, c);
                    assert!((out.get(y, x, c) - want).abs() < 1e-5);
                }
            }
        }
    }
}

#[test]
fn blend_examples() {
    let a = noise_image(6, 5, 10);
    let b = noise_image(6, 5, 11);
    assert_eq!(blend(&a, &b, 0.0).unwrap(), a);
    assert_eq!(blend(&a, &b, 1.0).unwrap(), b);
    let x = RasterImage::filled(2, 2, [0.2; 3]).unwrap();
    let y = RasterImage::filled(2, 2, [0.6; 3]).unwrap();
    assert!(blend(&x, &y, 0.5).unwrap().data().iter().all(|v| (v - 0.4).abs() < 1e-12));
    assert!(matches!(blend(&a, &noise_image(5, 5, 1), 0.5), Err(Error::Shape(_))));
}

#[test]
fn degenerate_morphs_return_a_contributor_inside_the_mesh() {
    let (a, b) = synthetic_pair(64);
    let ka = morph_landmarks(&a.landmarks, 64, 64).unwrap();
    let kb = morph_landmarks(&b.landmarks, 64, 64).unwrap();
    for (p, want, k) in [(MorphParams::new(0.0, 0.0).unwrap(), &a.image, &ka), (MorphParams::new(1.0, 1.0).unwrap(), &b.image, &kb)] {
        let out = morph_detailed(&a.image, &ka, &b.image, &kb, p).unwrap();
        let inside = coverage_mask(k, &out.mesh, 64, 64);
        for (i, &covered) in inside.iter().enumerate() {
            if covered {
                for c in 0..3 {
                    assert!((out.image.data()[i * 3 + c] - want.data()[i * 3 + c]).abs() < 1e-6);
                }
            }
        }
    }
}

#[test]
fn half_morph_is_closer_to_each_warped_contributor() {
    let (a, b) = synthetic_pair(64);
    let ka = morph_landmarks(&a.landmarks, 64, 64).unwrap();
    let kb = morph_landmarks(&b.landmarks, 64, 64).unwrap();
    let out = morph_detailed(&a.image, &ka, &b.image, &kb, MorphParams::new(0.5, 0.5).unwrap()).unwrap();
    let l1 = |x: &RasterImage, y: &RasterImage| {
        x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.data().len() as f64
    };
    let between = l1(&out.warped1, &out.warped2);
    assert!(l1(&out.image, &out.warped1) < between);
    assert!(l1(&out.image, &out.warped2) < between);
    assert!(l1(&out.image, &out.warped1) < l1(&a.image, &b.image));
    assert_eq!(out.image.height(), 64);
    assert_eq!(morph(&a.image, &ka, &b.image, &kb, MorphParams::new(0.5, 0.5).unwrap()).unwrap(), out.image);
}

#[test]
fn canonical_landmarks_align_to_a_centre_crop() {
    let img = smooth_image(160, 160, 12);
    let pts: Vec<[f64; 2]> = CANONICAL_128.iter().map(|p| [p[0] + 16.0, p[1] + 16.0]).collect();
    let out = align_face_to(&img, &landmarks(&pts), 128).unwrap();
    assert!((out.transform.scale() - 1.0).abs() < 1e-9);
    assert!(out.transform.angle().abs() < 1e-9);
    for y in 0..128 {
        for x in 0..128 {
            for c in 0..3 {
                assert!((out.image.get(y, x, c) - img.get(y + 16, x + 16, c)).abs() < 1e-9);
            }
        }
    }
    let same = align_face(&smooth_image(128, 128, 13), &landmarks(&CANONICAL_128)).unwrap();
    assert_eq!(same, smooth_image(128, 128, 13));
}

/// Closed-form least-squares similarity (complex-number form).
fn similarity_oracle(src: &[[f64; 2]], dst: &[[f64; 2]]) -> (f64, f64) {
    let n = src.len() as f64;
    let ms = src.iter().fold([0.0, 0.0], |m, p| [m[0] + p[0] / n, m[1] + p[1] / n]);
    let md = dst.iter().fold([0.0, 0.0], |m, p| [m[0] + p[0] / n, m[1] + p[1] / n]);
    let (mut re, mut im, mut norm) = (0.0, 0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let (sx, sy, dx, dy) = (s[0] - ms[0], s[1] - ms[1], d[0] - md[0], d[1] - md[1]);
        re += sx * dx + sy * dy;
        im += sx * dy - sy * dx;
        norm += sx * sx + sy * sy;
    }
    let (a, b) = (re / norm, im / norm);
    (a.hypot(b), b.atan2(a))
}

#[test]
fn rotated_input_aligns_back_onto_the_template() {
    let template = canonical_template(128);
    let theta = 10f64.to_radians();
    let rotated: Vec<[f64; 2]> = template
        .iter()
        .map(|p| {
            let (x, y) = (p[0] - 64.0, p[1] - 64.0);
            [64.0 + x * theta.cos() - y * theta.sin(), 64.0 + x * theta.sin() + y * theta.cos()]
        })
        .collect();
    let out = align_face_to(&smooth_image(128, 128, 14), &landmarks(&rotated), 128).unwrap();
    for (p, t) in rotated.iter().zip(&template) {
        let q = out.transform.apply(*p);
        assert!((q[0] - t[0]).hypot(q[1] - t[1]) < 0.5);
    }
    let (scale, angle) = similarity_oracle(&rotated, &template);
    assert!((out.transform.scale() - scale).abs() < 1e-9);
    assert!((out.transform.angle() - angle).abs() < 1e-9);
    assert!((angle + theta).abs() < 1e-9);
}

#[test]
fn doubled_input_recovers_half_scale() {
    let template = canonical_template(128);
    let doubled: Vec<[f64; 2]> = template.iter().map(|p| [2.0 * p[0], 2.0 * p[1]]).collect();
    let t = fit_similarity(&doubled, &template).unwrap();
    assert!((t.scale() - 0.5).abs() < 1e-6);
    assert!((similarity_oracle(&doubled, &template).0 - 0.5).abs() < 1e-12);
    let out = align_face(&smooth_image(256, 256, 15), &landmarks(&doubled)).unwrap();
    assert_eq!((out.height(), out.width()), (128, 128));
}

#[test]
fn collinear_alignment_landmarks_fail() {
    let line: Vec<[f64; 2]> = (0..5).map(|i| [10.0 * i as f64, 5.0]).collect();
    assert!(matches!(align_face(&smooth_image(64, 64, 1), &landmarks(&line)), Err(Error::DegenerateGeometry(_))));
}
