//! The FD-GAN networks: identity encoder, identity separation network,
//! facial restoration network (together the generator) and the pair
//! discriminator.
//!
//! All convolutions pad to keep `size / stride` outputs. Parameters live in a
//! [`ParamStore`] under dotted names (`gen.enc.conv1.weight`, ...). Each
//! forward pass binds a parameter into its graph at most once, so every
//! generator invocation in a pass reads the same leaf.

mod checkpoint;
mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, FORMAT_VERSION};
pub use params::{
    truncated_normal, NetConfig, ParamStore, BN_EPS, BN_MOMENTUM, INIT_STD, LEAKY_SLOPE,
};

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};
use params::Builder;

pub const GENERATOR: &str = "gen";
pub const DISCRIMINATOR: &str = "disc";
pub const ENCODER: &str = "gen.enc";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; running statistics are collected.
    Train,
    /// Running statistics in batch norm.
    Infer,
}

/// Batch statistics observed by one batch-norm layer during a training pass.
#[derive(Clone, Debug)]
pub struct BnStat {
    pub name: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

/// A forward pass under construction.
pub struct Forward {
    pub graph: Graph,
    mode: Mode,
    bound: HashMap<String, Var>,
    frozen: Vec<String>,
    bn_stats: Vec<BnStat>,
    trace: Option<Vec<(String, Vec<usize>)>>,
}

impl Forward {
    pub fn new(mode: Mode) -> Self {
        Self {
            graph: Graph::new(),
            mode,
            bound: HashMap::new(),
            frozen: Vec::new(),
            bn_stats: Vec::new(),
            trace: None,
        }
    }

    /// Records the output shape of every named layer.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    /// Parameters under `prefix` are bound without gradients.
    pub fn freeze(&mut self, prefix: &str) {
        self.frozen.push(prefix.to_string());
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Binds `name` from `store`, reusing the existing leaf if already bound.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = store.param(name)?.clone();
        let v = if self.frozen.iter().any(|p| name.starts_with(p.as_str())) {
            self.graph.constant(t)
        } else {
            self.graph.param(t)
        };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bound(&self, name: &str) -> Option<Var> {
        self.bound.get(name).copied()
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (&String, Var)> {
        self.bound.iter().map(|(k, v)| (k, *v))
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.graph.constant(t)
    }

    pub fn bn_stats(&self) -> &[BnStat] {
        &self.bn_stats
    }

    pub fn trace(&self) -> &[(String, Vec<usize>)] {
        self.trace.as_deref().unwrap_or(&[])
    }

    fn record(&mut self, name: &str, v: Var) {
        if let Some(trace) = &mut self.trace {
            trace.push((name.to_string(), self.graph.shape(v).to_vec()));
        }
    }
}

/// Folds the batch statistics of a training pass into the running estimates.
pub fn apply_bn_stats(store: &mut ParamStore, stats: &[BnStat]) -> Result<()> {
    for s in stats {
        store.update_running_stats(&s.name, &s.mean, &s.var, s.count)?;
    }
    Ok(())
}

fn conv(f: &mut Forward, store: &ParamStore, name: &str, x: Var, stride: usize, bias: bool) -> Result<Var> {
    let w = f.param(store, &format!("{name}.weight"))?;
    let k = f.graph.shape(w)[0];
    let b = if bias { Some(f.param(store, &format!("{name}.bias"))?) } else { None };
    f.graph.conv2d(x, w, b, stride, k / 2)
}

fn batch_norm(f: &mut Forward, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let gamma = f.param(store, &format!("{name}.gamma"))?;
    let beta = f.param(store, &format!("{name}.beta"))?;
    match f.mode {
        Mode::Train => {
            let count = f.graph.value(x).len() / f.graph.shape(x).last().copied().unwrap_or(1);
            let (y, mean, var) = f.graph.batch_norm(x, gamma, beta, BN_EPS)?;
            f.bn_stats.push(BnStat { name: name.to_string(), mean, var, count });
            Ok(y)
        }
        Mode::Infer => {
            let mean = store.buffer(&format!("{name}.running_mean"))?.data().to_vec();
            let var = store.buffer(&format!("{name}.running_var"))?.data().to_vec();
            f.graph.batch_norm_frozen(x, gamma, beta, &mean, &var, BN_EPS)
        }
    }
}

fn conv_bn_relu(f: &mut Forward, store: &ParamStore, name: &str, x: Var, stride: usize) -> Result<Var> {
    let y = conv(f, store, &format!("{name}.conv"), x, stride, false)?;
    let y = batch_norm(f, store, &format!("{name}.bn"), y)?;
    let y = f.graph.relu(y);
    f.record(name, y);
    Ok(y)
}

/// conv3×3 → BN → ReLU → conv3×3 → BN, plus an identity (or 1×1 projection
/// when the width changes) skip, then ReLU.
fn residual_block(f: &mut Forward, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let y = conv(f, store, &format!("{name}.conv1"), x, 1, false)?;
    let y = batch_norm(f, store, &format!("{name}.bn1"), y)?;
    let y = f.graph.relu(y);
    let y = conv(f, store, &format!("{name}.conv2"), y, 1, false)?;
    let y = batch_norm(f, store, &format!("{name}.bn2"), y)?;
    let proj = format!("{name}.proj.weight");
    let skip = if store.params().contains_key(&proj) {
        conv(f, store, &format!("{name}.proj"), x, 1, false)?
    } else {
        x
    };
    let y = f.graph.add(y, skip)?;
    let y = f.graph.relu(y);
    f.record(name, y);
    Ok(y)
}

fn check_images(f: &Forward, cfg: &NetConfig, x: Var, what: &str) -> Result<usize> {
    let [n, h, w, c] = f.graph.value(x).dims4()?;
    if c != 3 {
        return Err(Error::shape(format!("{what} expects 3 channels, got {c}")));
    }
    if h != w || !h.is_power_of_two() || h != cfg.image_size {
        return Err(Error::shape(format!(
            "{what} expects {0}x{0} images, got {h}x{w}",
            cfg.image_size
        )));
    }
    Ok(n)
}

/// Identity encoder: four conv + BN + ReLU groups, 7×7/1 then three 3×3/2.
pub fn encode(f: &mut Forward, store: &ParamStore, prefix: &str, cfg: &NetConfig, x: Var) -> Result<Var> {
    check_images(f, cfg, x, "encoder")?;
    let mut y = x;
    for (i, stride) in [1, 2, 2, 2].into_iter().enumerate() {
        y = conv_bn_relu(f, store, &format!("{prefix}.conv{}", i + 1), y, stride)?;
    }
    Ok(y)
}

/// Identity separation: three residual blocks per branch, channel concat in
/// (contributor, morph) order, then three fusing blocks back to the feature
/// width.
pub fn separate(f: &mut Forward, store: &ParamStore, cfg: &NetConfig, contributor: Var, morph: Var) -> Result<Var> {
    let expect = [cfg.feature_size(), cfg.feature_size(), cfg.feature_channels()];
    for v in [contributor, morph] {
        let s = f.graph.shape(v);
        if s.len() != 4 || s[1..] != expect {
            return Err(Error::shape(format!("separator expects [n, {expect:?}], got {s:?}")));
        }
    }
    if f.graph.shape(contributor) != f.graph.shape(morph) {
        return Err(Error::shape("separator inputs differ in shape"));
    }
    let mut a = contributor;
    let mut m = morph;
    for i in 0..3 {
        a = residual_block(f, store, &format!("gen.sep.contrib.{i}"), a)?;
        m = residual_block(f, store, &format!("gen.sep.morph.{i}"), m)?;
    }
    let mut y = f.graph.concat_channels(a, m)?;
    for i in 0..3 {
        y = residual_block(f, store, &format!("gen.sep.fuse.{i}"), y)?;
    }
    Ok(y)
}

/// Facial restoration: three (2× nearest upsample, 3×3 conv, BN, ReLU)
/// stages, then a 7×7 conv to RGB with tanh.
pub fn restore(f: &mut Forward, store: &ParamStore, cfg: &NetConfig, feature: Var) -> Result<Var> {
    let s = f.graph.shape(feature);
    if s.len() != 4 || s[3] != cfg.feature_channels() || s[1] != cfg.feature_size() || s[2] != cfg.feature_size() {
        return Err(Error::shape(format!(
            "restorer expects [n, {0}, {0}, {1}], got {s:?}",
            cfg.feature_size(),
            cfg.feature_channels()
        )));
    }
    let mut y = feature;
    for i in 1..=3 {
        y = f.graph.upsample2x(y)?;
        y = conv_bn_relu(f, store, &format!("gen.res.up{i}"), y, 1)?;
    }
    let y = conv(f, store, "gen.res.out", y, 1, true)?;
    let y = f.graph.tanh(y);
    f.record("gen.res.out", y);
    Ok(y)
}

/// `G(aux, morphed)`: the restored image and the separated identity feature.
pub fn generate(f: &mut Forward, store: &ParamStore, cfg: &NetConfig, aux: Var, morphed: Var) -> Result<(Var, Var)> {
    if f.graph.shape(aux) != f.graph.shape(morphed) {
        return Err(Error::shape("generator inputs differ in shape"));
    }
    let fa = encode(f, store, ENCODER, cfg, aux)?;
    let fab = encode(f, store, ENCODER, cfg, morphed)?;
    let feature = separate(f, store, cfg, fa, fab)?;
    let image = restore(f, store, cfg, feature)?;
    Ok((image, feature))
}

/// `D(reference, candidate)`: the pair is concatenated to six channels and
/// mapped to one score per batch element in (0, 1), shape `[n, 1]`.
pub fn discriminate(f: &mut Forward, store: &ParamStore, cfg: &NetConfig, reference: Var, candidate: Var) -> Result<Var> {
    let n = check_images(f, cfg, reference, "discriminator")?;
    check_images(f, cfg, candidate, "discriminator")?;
    if f.graph.shape(reference) != f.graph.shape(candidate) {
        return Err(Error::shape("discriminator pair differs in shape"));
    }
    let x = f.graph.concat_channels(reference, candidate)?;
    let y = conv(f, store, "disc.conv1", x, 2, true)?;
    let y = f.graph.leaky_relu(y, LEAKY_SLOPE);
    f.record("disc.conv1", y);
    let mut y = y;
    for i in 2..=3 {
        y = conv(f, store, &format!("disc.conv{i}"), y, 2, false)?;
        y = batch_norm(f, store, &format!("disc.bn{i}"), y)?;
        y = f.graph.leaky_relu(y, LEAKY_SLOPE);
        f.record(&format!("disc.conv{i}"), y);
    }
    let flat = f.graph.value(y).len() / n;
    let y = f.graph.reshape(y, vec![n, flat])?;
    let w = f.param(store, "disc.fc.weight")?;
    let b = f.param(store, "disc.fc.bias")?;
    let y = f.graph.linear(y, w, b)?;
    let y = f.graph.sigmoid(y);
    f.record("disc.fc", y);
    Ok(y)
}

fn build_encoder<R: Rng>(b: &mut Builder<'_, R>, prefix: &str, cfg: &NetConfig) {
    let ch = cfg.encoder_channels();
    let mut cin = 3;
    for (i, &c) in ch.iter().enumerate() {
        let k = if i == 0 { 7 } else { 3 };
        b.weight(format!("{prefix}.conv{}.conv.weight", i + 1), &[k, k, cin, c]);
        b.batch_norm(&format!("{prefix}.conv{}.bn", i + 1), c);
        cin = c;
    }
}

fn build_residual<R: Rng>(b: &mut Builder<'_, R>, name: &str, cin: usize, cout: usize) {
    b.weight(format!("{name}.conv1.weight"), &[3, 3, cin, cout]);
    b.batch_norm(&format!("{name}.bn1"), cout);
    b.weight(format!("{name}.conv2.weight"), &[3, 3, cout, cout]);
    b.batch_norm(&format!("{name}.bn2"), cout);
    if cin != cout {
        b.weight(format!("{name}.proj.weight"), &[1, 1, cin, cout]);
    }
}

/// Encoder weights alone, e.g. for a matcher backbone.
pub fn init_encoder(prefix: &str, cfg: &NetConfig, rng: &mut impl Rng) -> Result<ParamStore> {
    cfg.validate()?;
    let mut b = Builder::new(rng);
    build_encoder(&mut b, prefix, cfg);
    Ok(b.store)
}

pub fn init_generator(cfg: &NetConfig, rng: &mut impl Rng) -> Result<ParamStore> {
    cfg.validate()?;
    let mut b = Builder::new(rng);
    build_encoder(&mut b, ENCODER, cfg);
    let c = cfg.feature_channels();
    for branch in ["contrib", "morph"] {
        for i in 0..3 {
            build_residual(&mut b, &format!("gen.sep.{branch}.{i}"), c, c);
        }
    }
    build_residual(&mut b, "gen.sep.fuse.0", 2 * c, c);
    build_residual(&mut b, "gen.sep.fuse.1", c, c);
    build_residual(&mut b, "gen.sep.fuse.2", c, c);
    let mut cin = c;
    for (i, &cout) in cfg.restorer_channels().iter().enumerate() {
        b.weight(format!("gen.res.up{}.conv.weight", i + 1), &[3, 3, cin, cout]);
        b.batch_norm(&format!("gen.res.up{}.bn", i + 1), cout);
        cin = cout;
    }
    b.weight("gen.res.out.weight".into(), &[7, 7, cin, 3]);
    b.bias("gen.res.out.bias".into(), 3);
    Ok(b.store)
}

pub fn init_discriminator(cfg: &NetConfig, rng: &mut impl Rng) -> Result<ParamStore> {
    cfg.validate()?;
    let mut b = Builder::new(rng);
    let [d1, d2, d3] = cfg.discriminator_channels();
    b.weight("disc.conv1.weight".into(), &[3, 3, 6, d1]);
    b.bias("disc.conv1.bias".into(), d1);
    b.weight("disc.conv2.weight".into(), &[3, 3, d1, d2]);
    b.batch_norm("disc.bn2", d2);
    b.weight("disc.conv3.weight".into(), &[3, 3, d2, d3]);
    b.batch_norm("disc.bn3", d3);
    let s = cfg.image_size / 8;
    b.weight("disc.fc.weight".into(), &[s * s * d3, 1]);
    b.bias("disc.fc.bias".into(), 1);
    Ok(b.store)
}

/// Generator followed by discriminator, drawn from one random stream.
pub fn init_networks(cfg: &NetConfig, rng: &mut impl Rng) -> Result<ParamStore> {
    let mut store = init_generator(cfg, rng)?;
    store.merge(init_discriminator(cfg, rng)?);
    Ok(store)
}

/// Runs the generator in inference mode on batches of aligned images.
pub fn restore_batch(store: &ParamStore, cfg: &NetConfig, aux: &Tensor, morphed: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut f = Forward::new(Mode::Infer);
    let a = f.input(aux.clone());
    let m = f.input(morphed.clone());
    let (img, feat) = generate(&mut f, store, cfg, a, m)?;
    Ok((f.graph.value(img).clone(), f.graph.value(feat).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> NetConfig {
        NetConfig::new(16, 16).unwrap()
    }

    fn random_images(n: usize, size: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * size * size * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(vec![n, size, size, 3], data).unwrap()
    }

    #[test]
    fn generator_uses_every_parameter_once_per_pass() {
        let cfg = small();
        let store = init_generator(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut f = Forward::new(Mode::Train);
        let a = f.input(random_images(2, 16, 1));
        let m = f.input(random_images(2, 16, 2));
        let (b1, _) = generate(&mut f, &store, &cfg, a, m).unwrap();
        let nodes_after_first = f.graph.len();
        let (_, _) = generate(&mut f, &store, &cfg, b1, m).unwrap();
        assert_eq!(f.bound_params().count(), store.params().len());
        // The second invocation binds nothing new.
        let per_pass = nodes_after_first - 2 - store.params().len();
        assert_eq!(f.graph.len(), nodes_after_first + per_pass);
    }

    #[test]
    fn encoder_rejects_bad_inputs() {
        let cfg = small();
        let store = init_generator(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut f = Forward::new(Mode::Infer);
        let x = f.input(Tensor::zeros(&[1, 16, 16, 4]));
        assert!(matches!(encode(&mut f, &store, ENCODER, &cfg, x), Err(Error::Shape(_))));
        let x = f.input(Tensor::zeros(&[1, 32, 32, 3]));
        assert!(matches!(encode(&mut f, &store, ENCODER, &cfg, x), Err(Error::Shape(_))));
        assert!(NetConfig::new(24, 1).is_err());
    }

    #[test]
    fn separator_rejects_mismatched_inputs() {
        let cfg = small();
        let store = init_generator(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut f = Forward::new(Mode::Infer);
        let a = f.input(Tensor::zeros(&[1, 2, 2, 32]));
        let b = f.input(Tensor::zeros(&[2, 2, 2, 32]));
        assert!(separate(&mut f, &store, &cfg, a, b).is_err());
        let c = f.input(Tensor::zeros(&[1, 2, 2, 16]));
        assert!(separate(&mut f, &store, &cfg, a, c).is_err());
        assert!(restore(&mut f, &store, &cfg, c).is_err());
    }

    #[test]
    fn inference_is_bit_reproducible() {
        let cfg = small();
        let store = init_generator(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let aux = random_images(2, 16, 3);
        let morph = random_images(2, 16, 4);
        let (x1, f1) = restore_batch(&store, &cfg, &aux, &morph).unwrap();
        let (x2, f2) = restore_batch(&store, &cfg, &aux, &morph).unwrap();
        assert_eq!(x1, x2);
        assert_eq!(f1, f2);
    }
}
