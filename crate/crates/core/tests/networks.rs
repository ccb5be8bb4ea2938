mod common;

use common::*;
use fdgan::net::*;
use fdgan::tensor::Tensor;

fn nonnegative(shape: &[usize], seed: u64) -> Tensor {
    let t = noise_tensor(shape, seed);
    Tensor::new(shape.to_vec(), t.data().iter().map(|v| v.abs()).collect()).unwrap()
}

fn run_separator(store: &ParamStore, cfg: &NetConfig, a: &Tensor, m: &Tensor) -> Tensor {
    let mut f = Forward::new(Mode::Infer);
    let (va, vm) = (f.input(a.clone()), f.input(m.clone()));
    let y = separate(&mut f, store, cfg, va, vm).unwrap();
    f.graph.value(y).clone()
}

#[test]
fn encoder_keeps_the_batch_and_divides_space_by_eight() {
    let cfg = NetConfig::new(32, 16).unwrap();
    let store = init_generator(&cfg, &mut rng(0)).unwrap();
    let mut f = Forward::new(Mode::Train).with_trace();
    let x = f.input(noise_tensor(&[4, 32, 32, 3], 1));
    let y = encode(&mut f, &store, ENCODER, &cfg, x).unwrap();
    assert_eq!(f.graph.shape(y), &[4, 4, 4, 32]);
    let sizes: Vec<usize> = f.trace().iter().map(|(_, s)| s[1]).collect();
    assert_eq!(sizes, [32, 16, 8, 4]);
}

#[test]
fn encoder_rejects_wrong_channels_and_sizes() {
    let cfg = NetConfig::new(16, 16).unwrap();
    let store = init_generator(&cfg, &mut rng(0)).unwrap();
    for shape in [[1, 16, 16, 1], [1, 24, 24, 3], [1, 32, 32, 3]] {
        let mut f = Forward::new(Mode::Infer);
        let x = f.input(Tensor::zeros(&shape));
        assert!(matches!(encode(&mut f, &store, ENCODER, &cfg, x), Err(fdgan::Error::Shape(_))));
    }
    assert!(NetConfig::new(24, 16).is_err());
}

#[test]
fn separator_order_matters() {
    let cfg = NetConfig::new(16, 16).unwrap();
    let store = init_generator(&cfg, &mut rng(2)).unwrap();
    let a = nonnegative(&[1, 2, 2, 32], 3);
    let m = nonnegative(&[1, 2, 2, 32], 4);
    let y = run_separator(&store, &cfg, &a, &m);
    assert_eq!(y.shape(), &[1, 2, 2, 32]);
    assert!(max_abs_diff(y.data(), run_separator(&store, &cfg, &m, &a).data()) > 1e-6);
}

#[test]
fn zero_kernels_leave_the_projection_skip() {
    let cfg = NetConfig::new(16, 16).unwrap();
    let mut store = init_generator(&cfg, &mut rng(5)).unwrap();
    let names: Vec<String> = store
        .names_with_prefix("gen.sep.")
        .filter(|n| n.contains(".conv"))
        .cloned()
        .collect();
    for n in names {
        store.param_mut(&n).unwrap().data_mut().fill(0.0);
    }
    let a = nonnegative(&[2, 2, 2, 32], 6);
    let m = nonnegative(&[2, 2, 2, 32], 7);
    let y = run_separator(&store, &cfg, &a, &m);

    let proj = store.param("gen.sep.fuse.0.proj.weight").unwrap();
    let (c, out) = (32, 32);
    let mut expect = vec![0.0; 2 * 4 * out];
    for p in 0..8 {
        for o in 0..out {
            let mut s = 0.0;
            for i in 0..c {
                s += a.data()[p * c + i] * proj.data()[i * out + o];
                s += m.data()[p * c + i] * proj.data()[(c + i) * out + o];
            }
            expect[p * out + o] = s.max(0.0);
        }
    }
    assert!(max_abs_diff(y.data(), &expect) < 1e-12);
}

#[test]
fn restorer_upsamples_to_a_bounded_image() {
    let cfg = NetConfig::new(32, 16).unwrap();
    let mut store = init_generator(&cfg, &mut rng(8)).unwrap();
    for v in store.param_mut("gen.res.out.weight").unwrap().data_mut() {
        *v *= 500.0;
    }
    let mut f = Forward::new(Mode::Train).with_trace();
    let x = f.input(noise_tensor(&[2, 4, 4, 32], 9));
    let y = restore(&mut f, &store, &cfg, x).unwrap();
    let sizes: Vec<usize> = f.trace().iter().map(|(_, s)| s[1]).collect();
    assert_eq!(sizes, [8, 16, 32, 32]);
    let out = f.graph.value(y);
    assert_eq!(out.shape(), &[2, 32, 32, 3]);
    assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert!(out.data().iter().any(|v| v.abs() > 0.99));
}

#[test]
fn generator_preserves_image_shape_and_nests() {
    let cfg = NetConfig::new(16, 16).unwrap();
    let store = init_generator(&cfg, &mut rng(10)).unwrap();
    let a0 = noise_tensor(&[2, 16, 16, 3], 11);
    let ab0 = noise_tensor(&[2, 16, 16, 3], 12);
    let (b1, _) = restore_batch(&store, &cfg, &a0, &ab0).unwrap();
    assert_eq!(b1.shape(), a0.shape());
    let (a2, f) = restore_batch(&store, &cfg, &b1, &ab0).unwrap();

    let mut g = Forward::new(Mode::Infer);
    let (va, vm) = (g.input(a0), g.input(ab0));
    let (vb1, _) = generate(&mut g, &store, &cfg, va, vm).unwrap();
    let (va2, vf) = generate(&mut g, &store, &cfg, vb1, vm).unwrap();
    assert_eq!(g.graph.value(va2), &a2);
    assert_eq!(g.graph.value(vf), &f);
}

#[test]
fn discriminator_scores_each_pair_in_the_open_unit_interval() {
    let cfg = NetConfig::new(32, 16).unwrap();
    let store = init_discriminator(&cfg, &mut rng(13)).unwrap();
    let mut f = Forward::new(Mode::Train).with_trace();
    let r = f.input(noise_tensor(&[3, 32, 32, 3], 14));
    let c = f.input(noise_tensor(&[3, 32, 32, 3], 15));
    let y = discriminate(&mut f, &store, &cfg, r, c).unwrap();
    assert_eq!(f.graph.shape(y), &[3, 1]);
    assert!(f.graph.value(y).data().iter().all(|&s| s > 0.0 && s < 1.0));
    let conv3 = &f.trace().iter().find(|(n, _)| n == "disc.conv3").unwrap().1;
    assert_eq!(conv3, &vec![3, 4, 4, 16]);
}
