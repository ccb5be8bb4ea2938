use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FaceSet;
use crate::error::{Error, Result};
use crate::image::RasterImage;
use crate::net::{apply_bn_stats, encode, init_encoder, truncated_normal, Checkpoint, Forward, Mode, NetConfig, ParamStore};
use crate::tensor::Tensor;
use crate::train::Adam;

/// A face verifier: similarity scores plus a decision threshold.
pub trait Matcher {
    /// Higher means more similar. Symmetric in its arguments.
    fn score(&self, a: &RasterImage, b: &RasterImage) -> Result<f64>;

    fn threshold(&self) -> f64;

    /// Scores every `(a[i], b[i])` pair.
    fn score_pairs(&self, a: &[&RasterImage], b: &[&RasterImage]) -> Result<Vec<f64>> {
        if a.len() != b.len() {
            return Err(Error::shape("score_pairs needs equally many images on both sides"));
        }
        a.iter().zip(b).map(|(x, y)| self.score(x, y)).collect()
    }
}

pub const MATCHER_PREFIX: &str = "match.enc";

fn resample(img: &RasterImage, size: usize) -> Result<RasterImage> {
    if img.height() != img.width() || img.width() < size || img.width() % size != 0 {
        return Err(Error::shape(format!(
            "matcher expects square images with a side that is a multiple of {size}, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    if img.width() == size {
        Ok(img.clone())
    } else {
        img.downsample(img.width() / size)
    }
}

fn to_input(images: &[&RasterImage], size: usize) -> Result<Tensor> {
    let small = images.iter().map(|i| resample(i, size)).collect::<Result<Vec<_>>>()?;
    Tensor::from_images(&small.iter().collect::<Vec<_>>())
}
const THRESHOLD_KEY: &str = "match.threshold";

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-12)
}

/// Cosine similarity of pooled features from a dedicated identity encoder.
/// Inputs larger than the encoder's image size are box-downsampled first.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatcher {
    net: NetConfig,
    store: ParamStore,
    threshold: f64,
}

impl EmbeddingMatcher {
    /// `store` must hold an encoder under [`MATCHER_PREFIX`].
    pub fn new(net: NetConfig, store: ParamStore, threshold: f64) -> Result<Self> {
        net.validate()?;
        store.param(&format!("{MATCHER_PREFIX}.conv1.conv.weight"))?;
        Ok(Self { net, store, threshold })
    }

    /// An untrained encoder drawn from `seed`.
    pub fn initialized(net: NetConfig, seed: u64) -> Result<Self> {
        let store = init_encoder(MATCHER_PREFIX, &net, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Self::new(net, store, f64::NEG_INFINITY)
    }

    pub fn net(&self) -> &NetConfig {
        &self.net
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn set_threshold(&mut self, t: f64) {
        self.threshold = t;
    }

    /// Pooled encoder features, one vector per image.
    pub fn embed(&self, images: &[&RasterImage]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(32) {
            let mut f = Forward::new(Mode::Infer);
            let x = f.input(to_input(chunk, self.net.image_size)?);
            let y = encode(&mut f, &self.store, MATCHER_PREFIX, &self.net, x)?;
            let g = f.graph.global_avg_pool(y)?;
            let t = f.graph.value(g);
            let c = t.shape()[1];
            out.extend(t.data().chunks_exact(c).map(|r| r.to_vec()));
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut store = self.store.clone();
        store.insert_buffer(THRESHOLD_KEY, Tensor::scalar(self.threshold));
        Checkpoint::new(self.net, 0, store).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let threshold = ck
            .store
            .buffer(THRESHOLD_KEY)
            .map_err(|_| Error::Format("checkpoint has no matcher threshold".into()))?
            .item();
        let mut store = ParamStore::new();
        for (k, v) in ck.store.params() {
            store.insert_param(k.clone(), v.clone());
        }
        for (k, v) in ck.store.buffers() {
            if k != THRESHOLD_KEY {
                store.insert_buffer(k.clone(), v.clone());
            }
        }
        Self::new(ck.net, store, threshold).map_err(|e| Error::Format(format!("not a matcher checkpoint: {e}")))
    }
}

impl Matcher for EmbeddingMatcher {
    fn score(&self, a: &RasterImage, b: &RasterImage) -> Result<f64> {
        let e = self.embed(&[a, b])?;
        Ok(cosine(&e[0], &e[1]))
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }

    fn score_pairs(&self, a: &[&RasterImage], b: &[&RasterImage]) -> Result<Vec<f64>> {
        if a.len() != b.len() {
            return Err(Error::shape("score_pairs needs equally many images on both sides"));
        }
        let ea = self.embed(a)?;
        let eb = self.embed(b)?;
        Ok(ea.iter().zip(&eb).map(|(x, y)| cosine(x, y)).collect())
    }
}

/// Identity-classification training for the matcher encoder. The head is a
/// cosine classifier with an additive margin; it is discarded afterwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherTrainConfig {
    /// Side length the encoder sees; larger faces are box-downsampled.
    pub input_size: usize,
    pub width_div: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub scale: f64,
    pub margin: f64,
    pub seed: u64,
}

impl Default for MatcherTrainConfig {
    fn default() -> Self {
        Self { input_size: 16, width_div: 8, steps: 600, batch_size: 32, lr: 2e-3, scale: 16.0, margin: 0.2, seed: 0 }
    }
}

impl MatcherTrainConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }
}

const HEAD: &str = "match.head.weight";

/// Trains a matcher on `faces`; the threshold is left unset (accept all)
/// until calibrated.
pub fn train_matcher(faces: &FaceSet, config: &MatcherTrainConfig) -> Result<EmbeddingMatcher> {
    if faces.classes() < 2 || faces.len() < 2 {
        return Err(Error::InsufficientData("matcher training needs at least two identities".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let net = NetConfig::new(config.input_size, config.width_div).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = init_encoder(MATCHER_PREFIX, &net, &mut rng)?;
    let dim = net.feature_channels();
    store.insert_param(HEAD, truncated_normal(&[faces.classes(), dim], 1.0, &mut rng));
    let mut adam = Adam::new(config.lr, 0.9, 0.999, 1e-8);
    let mut order: Vec<usize> = (0..faces.len()).collect();
    let mut pos = order.len();
    for _ in 0..config.steps {
        let mut idx = Vec::with_capacity(config.batch_size);
        while idx.len() < config.batch_size {
            if pos == order.len() {
                order.shuffle(&mut rng);
                pos = 0;
            }
            idx.push(order[pos]);
            pos += 1;
        }
        let imgs: Vec<&RasterImage> = idx.iter().map(|&i| &faces.images[i]).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| faces.labels[i]).collect();

        let mut f = Forward::new(Mode::Train);
        let x = f.input(to_input(&imgs, net.image_size)?);
        let y = encode(&mut f, &store, MATCHER_PREFIX, &net, x)?;
        let e = f.graph.global_avg_pool(y)?;
        let e = f.graph.normalize_rows(e)?;
        let w = f.param(&store, HEAD)?;
        let w = f.graph.normalize_rows(w)?;
        let cos = f.graph.matmul_bt(e, w)?;
        let mut margin = Tensor::zeros(&[labels.len(), faces.classes()]);
        for (r, &l) in labels.iter().enumerate() {
            margin.data_mut()[r * faces.classes() + l] = -config.margin;
        }
        let m = f.input(margin);
        let cos = f.graph.add(cos, m)?;
        let logits = f.graph.scale(cos, config.scale);
        let loss = f.graph.softmax_cross_entropy(logits, &labels)?;
        if !f.graph.value(loss).item().is_finite() {
            return Err(Error::Diverged { step: adam.steps_taken() as usize + 1, metrics: "matcher loss".into() });
        }
        let mut grads = f.graph.backward(loss)?;
        let mut g = std::collections::BTreeMap::new();
        for (name, v) in f.bound_params() {
            if let Some(t) = grads.take(v) {
                g.insert(name.clone(), t);
            }
        }
        adam.step(&mut store, &g)?;
        apply_bn_stats(&mut store, f.bn_stats())?;
    }
    let mut enc = ParamStore::new();
    for (k, v) in store.params() {
        if k.starts_with(MATCHER_PREFIX) {
            enc.insert_param(k.clone(), v.clone());
        }
    }
    for (k, v) in store.buffers() {
        enc.insert_buffer(k.clone(), v.clone());
    }
    EmbeddingMatcher::new(net, enc, f64::NEG_INFINITY)
}
