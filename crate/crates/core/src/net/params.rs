use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const INIT_STD: f64 = 0.02;
pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running statistic in a batch-norm update.
pub const BN_MOMENTUM: f64 = 0.9;
pub const LEAKY_SLOPE: f64 = 0.2;

/// Network size: input resolution and a channel divisor applied to every
/// layer width (1 for the full architecture).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub image_size: usize,
    pub width_div: usize,
}

impl NetConfig {
    pub const FULL: NetConfig = NetConfig { image_size: 128, width_div: 1 };

    pub fn new(image_size: usize, width_div: usize) -> Result<Self> {
        let cfg = Self { image_size, width_div };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 || !self.image_size.is_power_of_two() {
            return Err(Error::shape(format!(
                "image size must be a power of two >= 16, got {}",
                self.image_size
            )));
        }
        if self.width_div == 0 || 64 % self.width_div != 0 {
            return Err(Error::Config(format!(
                "width divisor must divide 64, got {}",
                self.width_div
            )));
        }
        Ok(())
    }

    pub fn encoder_channels(&self) -> [usize; 4] {
        [64, 128, 256, 512].map(|c| c / self.width_div)
    }

    /// Channels of encoder output and of the separated identity feature.
    pub fn feature_channels(&self) -> usize {
        512 / self.width_div
    }

    pub fn restorer_channels(&self) -> [usize; 3] {
        [256, 128, 64].map(|c| c / self.width_div)
    }

    pub fn discriminator_channels(&self) -> [usize; 3] {
        [64, 128, 256].map(|c| c / self.width_div)
    }

    pub fn feature_size(&self) -> usize {
        self.image_size / 8
    }
}

/// Named trainable tensors plus non-trainable buffers (batch-norm running
/// statistics).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor> {
        &self.buffers
    }

    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing buffer {name}")))
    }

    pub fn insert_param(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, t: Tensor) {
        self.buffers.insert(name.into(), t);
    }

    /// Adds every entry of `other`, replacing same-named ones.
    pub fn merge(&mut self, other: ParamStore) {
        self.params.extend(other.params);
        self.buffers.extend(other.buffers);
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a String> + 'a {
        self.params.keys().filter(move |k| k.starts_with(prefix))
    }

    /// Folds one batch-norm batch statistic into the running estimate.
    pub fn update_running_stats(&mut self, bn: &str, mean: &[f64], var: &[f64], count: usize) -> Result<()> {
        let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
        let rm = self
            .buffers
            .get_mut(&format!("{bn}.running_mean"))
            .ok_or_else(|| Error::Config(format!("missing running mean for {bn}")))?;
        for (r, m) in rm.data_mut().iter_mut().zip(mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
        }
        let rv = self
            .buffers
            .get_mut(&format!("{bn}.running_var"))
            .ok_or_else(|| Error::Config(format!("missing running var for {bn}")))?;
        for (r, v) in rv.data_mut().iter_mut().zip(var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v * unbias;
        }
        Ok(())
    }
}

/// Normal(0, std) truncated to two standard deviations.
pub fn truncated_normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let normal = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("element count matches shape")
}

/// Builds the parameter set of a network in a fixed order so that a seed
/// fully determines the initialization.
pub(crate) struct Builder<'r, R: Rng> {
    pub store: ParamStore,
    rng: &'r mut R,
}

impl<'r, R: Rng> Builder<'r, R> {
    pub fn new(rng: &'r mut R) -> Self {
        Self { store: ParamStore::new(), rng }
    }

    pub fn weight(&mut self, name: String, shape: &[usize]) {
        let t = truncated_normal(shape, INIT_STD, self.rng);
        self.store.insert_param(name, t);
    }

    pub fn bias(&mut self, name: String, n: usize) {
        self.store.insert_param(name, Tensor::zeros(&[n]));
    }

    pub fn batch_norm(&mut self, name: &str, c: usize) {
        self.store.insert_param(format!("{name}.gamma"), Tensor::full(&[c], 1.0));
        self.store.insert_param(format!("{name}.beta"), Tensor::zeros(&[c]));
        self.store.insert_buffer(format!("{name}.running_mean"), Tensor::zeros(&[c]));
        self.store.insert_buffer(format!("{name}.running_var"), Tensor::full(&[c], 1.0));
    }
}
