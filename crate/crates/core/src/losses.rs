//! FD-GAN objectives.
//!
//! Every L1 distance is the elementwise mean of `|x - y|`, so the loss
//! weights behave the same at any resolution. Expectations over the data are
//! minibatch means.
//!
//! Each objective comes in two forms: a plain `f64` function over tensors,
//! used for reporting and testing, and a graph builder in [`graph`] used by
//! the trainer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RasterImage;
use crate::tensor::Tensor;

/// Weights of the generator objective
/// `L_G = (L_pix + beta1 * L_sym) + lambda1 * L_f + lambda2 * L_adv`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub beta1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 10.0, lambda2: 1.0, beta1: 1.0 }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, beta1: f64) -> Result<Self> {
        let w = Self { lambda1, lambda2, beta1 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("beta1", self.beta1)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::param(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Restorations and separated features of one dual pass.
///
/// The second-stage fields are `None` when the symmetric dual network is
/// disabled.
#[derive(Clone, Debug, PartialEq)]
pub struct DualPassOutputs {
    /// `G(a0, ab0)`
    pub restored_b1: Tensor,
    /// `G(b0, ab0)`
    pub restored_a1: Tensor,
    /// `G(restored_a1, ab0)`
    pub restored_b2: Option<Tensor>,
    /// `G(restored_b1, ab0)`
    pub restored_a2: Option<Tensor>,
    /// Feature of `G(a0, ab0)`.
    pub feature_b: Tensor,
    /// Feature of `G(b0, ab0)`.
    pub feature_a: Tensor,
    /// Feature of `G(restored_a1, ab0)`, paired with `feature_b`.
    pub feature_b2: Option<Tensor>,
    /// Feature of `G(restored_b1, ab0)`, paired with `feature_a`.
    pub feature_a2: Option<Tensor>,
    /// Discriminator scores on `(b0, restored_b1)`.
    pub d_fake: Vec<f64>,
}

impl DualPassOutputs {
    /// Restorations with their ground truth selector: `true` for the `b`
    /// side.
    fn restorations(&self) -> Vec<(&Tensor, bool)> {
        let mut out = vec![(&self.restored_b1, true)];
        if let Some(t) = &self.restored_b2 {
            out.push((t, true));
        }
        out.push((&self.restored_a1, false));
        if let Some(t) = &self.restored_a2 {
            out.push((t, false));
        }
        out
    }

    pub fn restoration_count(&self) -> usize {
        self.restorations().len()
    }
}

pub fn l1_mean(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::shape(format!("l1 operands differ: {:?} vs {:?}", x.shape(), y.shape())));
    }
    if x.is_empty() {
        return Err(Error::shape("l1 of empty tensors"));
    }
    let s: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / x.len() as f64)
}

/// Mean absolute difference between mirrored pixel pairs, each pair counted
/// once and normalized by the number of pairs `h * w / 2`.
pub fn symmetry_loss_single(img: &RasterImage) -> Result<f64> {
    let (h, w) = (img.height(), img.width());
    if w % 2 != 0 {
        return Err(Error::param(format!("symmetry loss needs an even width, got {w}")));
    }
    let mut s = 0.0;
    for y in 0..h {
        for x in 0..w / 2 {
            let (l, r) = (img.pixel(y, x), img.pixel(y, w - 1 - x));
            s += (0..3).map(|c| (l[c] - r[c]).abs()).sum::<f64>() / 3.0;
        }
    }
    Ok(s / (h * w / 2) as f64)
}

/// Symmetry loss of an NHWC batch, averaged over the batch.
pub fn symmetry_loss_batch(t: &Tensor) -> Result<f64> {
    let [n, _, w, _] = t.dims4()?;
    if w % 2 != 0 {
        return Err(Error::param(format!("symmetry loss needs an even width, got {w}")));
    }
    let mut s = 0.0;
    for img in t.to_images()? {
        s += symmetry_loss_single(&img)?;
    }
    Ok(s / n as f64)
}

pub fn pixel_wise_loss(o: &DualPassOutputs, gt_a: &Tensor, gt_b: &Tensor) -> Result<f64> {
    o.restorations()
        .into_iter()
        .map(|(t, is_b)| l1_mean(t, if is_b { gt_b } else { gt_a }))
        .sum()
}

pub fn symmetry_loss(o: &DualPassOutputs) -> Result<f64> {
    o.restorations().into_iter().map(|(t, _)| symmetry_loss_batch(t)).sum()
}

/// Zero when the second stage is absent.
pub fn feature_loss(o: &DualPassOutputs) -> Result<f64> {
    let mut s = 0.0;
    if let Some(fa2) = &o.feature_a2 {
        s += l1_mean(fa2, &o.feature_a)?;
    }
    if let Some(fb2) = &o.feature_b2 {
        s += l1_mean(fb2, &o.feature_b)?;
    }
    Ok(s)
}

fn mean_sq_offset(scores: &[f64], target: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::shape("empty score batch"));
    }
    Ok(scores.iter().map(|d| (d - target).powi(2)).sum::<f64>() / scores.len() as f64)
}

pub fn adversarial_gen_loss(d_fake: &[f64]) -> Result<f64> {
    mean_sq_offset(d_fake, 1.0)
}

pub fn discriminator_loss(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    Ok(mean_sq_offset(d_real, 1.0)? + mean_sq_offset(d_fake, 0.0)?)
}

pub fn generator_total_loss(l_pix: f64, l_sym: f64, l_f: f64, l_adv: f64, w: &LossWeights) -> f64 {
    (l_pix + w.beta1 * l_sym) + w.lambda1 * l_f + w.lambda2 * l_adv
}

/// Graph builders mirroring the plain functions above.
pub mod graph {
    use crate::error::{Error, Result};
    use crate::tensor::{Graph, Var};

    pub fn l1_mean(g: &mut Graph, x: Var, y: Var) -> Result<Var> {
        let d = g.sub(x, y)?;
        let d = g.abs(d);
        Ok(g.mean(d))
    }

    /// Batch symmetry loss; `mean |x - flip(x)|` over the full width equals
    /// the half-width pair sum under the pair-count normalizer.
    pub fn symmetry(g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.shape(x).get(2).copied().unwrap_or(0);
        if w % 2 != 0 {
            return Err(Error::param(format!("symmetry loss needs an even width, got {w}")));
        }
        let f = g.flip_w(x)?;
        l1_mean(g, x, f)
    }

    pub fn adversarial_gen(g: &mut Graph, d_fake: Var) -> Var {
        let d = g.offset(d_fake, -1.0);
        let d = g.square(d);
        g.mean(d)
    }

    pub fn discriminator(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<Var> {
        let r = g.offset(d_real, -1.0);
        let r = g.square(r);
        let r = g.mean(r);
        let f = g.square(d_fake);
        let f = g.mean(f);
        g.add(r, f)
    }
}
