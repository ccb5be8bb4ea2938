//! Restoration accuracy and morph-attack success against a
//! threshold-calibrated face matcher.

mod matcher;

pub use matcher::{cosine, train_matcher, EmbeddingMatcher, Matcher, MatcherTrainConfig, MATCHER_PREFIX};

use serde::{Deserialize, Serialize};

use crate::dataset::{FaceSet, TrainingTriplet};
use crate::error::{Error, Result};
use crate::image::RasterImage;
use crate::net::{restore_batch, NetConfig, ParamStore};
use crate::tensor::Tensor;

/// The false accept rate used for calibration by default.
pub const DEFAULT_FAR: f64 = 1e-3;

/// The smallest threshold with at most `far` of the impostor scores strictly
/// above it. Returns `-inf` when every score may be accepted.
pub fn calibrate_threshold(impostor_scores: &[f64], far: f64) -> Result<f64> {
    if !(far > 0.0 && far <= 1.0) {
        return Err(Error::param(format!("false accept rate must lie in (0, 1], got {far}")));
    }
    let n = impostor_scores.len();
    if (n as f64) * far < 1.0 - 1e-9 {
        return Err(Error::InsufficientData(format!(
            "{n} impostor scores cannot resolve a false accept rate of {far}"
        )));
    }
    if impostor_scores.iter().any(|s| s.is_nan()) {
        return Err(Error::param("impostor scores contain NaN"));
    }
    let allowed = (far * n as f64 + 1e-9).floor() as usize;
    if allowed >= n {
        return Ok(f64::NEG_INFINITY);
    }
    let mut sorted = impostor_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[allowed])
}

/// Scores of every pair of images with different labels.
pub fn impostor_scores(matcher: &EmbeddingMatcher, faces: &FaceSet) -> Result<Vec<f64>> {
    let refs: Vec<&RasterImage> = faces.images.iter().collect();
    let emb = matcher.embed(&refs)?;
    let mut out = Vec::new();
    for i in 0..emb.len() {
        for j in i + 1..emb.len() {
            if faces.labels[i] != faces.labels[j] {
                out.push(cosine(&emb[i], &emb[j]));
            }
        }
    }
    Ok(out)
}

/// Calibrates `matcher` on impostor pairs from `faces`.
pub fn calibrate_matcher(matcher: &mut EmbeddingMatcher, faces: &FaceSet, far: f64) -> Result<f64> {
    let t = calibrate_threshold(&impostor_scores(matcher, faces)?, far)?;
    matcher.set_threshold(t);
    Ok(t)
}

/// Both contributors match the morph.
pub fn attack_success_scores(score1: f64, score2: f64, threshold: f64) -> bool {
    score1 > threshold && score2 > threshold
}

/// The restoration matches the accomplice but not the criminal.
pub fn restoration_success_scores(score_accomplice: f64, score_criminal: f64, threshold: f64) -> bool {
    score_accomplice > threshold && score_criminal <= threshold
}

pub fn attack_success(
    morphed: &RasterImage,
    contributor1: &RasterImage,
    contributor2: &RasterImage,
    matcher: &dyn Matcher,
) -> Result<bool> {
    let s1 = matcher.score(morphed, contributor1)?;
    let s2 = matcher.score(morphed, contributor2)?;
    Ok(attack_success_scores(s1, s2, matcher.threshold()))
}

pub fn restoration_success(
    restored: &RasterImage,
    accomplice: &RasterImage,
    criminal: &RasterImage,
    matcher: &dyn Matcher,
) -> Result<bool> {
    let sa = matcher.score(restored, accomplice)?;
    let sc = matcher.score(restored, criminal)?;
    Ok(restoration_success_scores(sa, sc, matcher.threshold()))
}

/// Restores the accomplice for each `(criminal, morphed)` pair.
pub fn demorph(
    store: &ParamStore,
    net: &NetConfig,
    criminals: &[&RasterImage],
    morphs: &[&RasterImage],
) -> Result<Vec<RasterImage>> {
    if criminals.len() != morphs.len() {
        return Err(Error::shape("demorph needs one criminal image per morph"));
    }
    let mut out = Vec::with_capacity(morphs.len());
    for (c, m) in criminals.chunks(16).zip(morphs.chunks(16)) {
        let (img, _) = restore_batch(store, net, &Tensor::from_images(c)?, &Tensor::from_images(m)?)?;
        for r in img.to_images()? {
            out.push(r);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub score_accomplice: f64,
    pub score_criminal: f64,
    pub success: bool,
}

/// Restoration accuracy `N / T` with per-item records. A non-finite
/// threshold is written as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "T")]
    pub total: usize,
    #[serde(rename = "N")]
    pub successes: usize,
    pub accuracy: f64,
    pub threshold: Option<f64>,
    pub items: Vec<EvalItem>,
}

impl EvalReport {
    pub fn from_items(items: Vec<EvalItem>, threshold: f64) -> Self {
        let total = items.len();
        let successes = items.iter().filter(|i| i.success).count();
        let accuracy = if total == 0 { 0.0 } else { successes as f64 / total as f64 };
        Self { total, successes, accuracy, threshold: threshold.is_finite().then_some(threshold), items }
    }

    /// Concatenates two partial reports taken at the same threshold.
    pub fn merge(self, other: EvalReport) -> Result<Self> {
        if self.threshold != other.threshold {
            return Err(Error::param("cannot merge reports taken at different thresholds"));
        }
        let t = self.threshold.unwrap_or(f64::NEG_INFINITY);
        let mut items = self.items;
        items.extend(other.items);
        Ok(Self::from_items(items, t))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Restores every test triplet and scores it against both contributors.
pub fn evaluate(
    triplets: &[TrainingTriplet],
    store: &ParamStore,
    net: &NetConfig,
    matcher: &dyn Matcher,
) -> Result<EvalReport> {
    if triplets.is_empty() {
        return Err(Error::InsufficientData("no test triplets to evaluate".into()));
    }
    let criminals: Vec<&RasterImage> = triplets.iter().map(|t| &t.criminal).collect();
    let morphs: Vec<&RasterImage> = triplets.iter().map(|t| &t.morphed).collect();
    let accomplices: Vec<&RasterImage> = triplets.iter().map(|t| &t.accomplice).collect();
    let restored = demorph(store, net, &criminals, &morphs)?;
    let restored: Vec<&RasterImage> = restored.iter().collect();
    let sa = matcher.score_pairs(&restored, &accomplices)?;
    let sc = matcher.score_pairs(&restored, &criminals)?;
    let t = matcher.threshold();
    let items = triplets
        .iter()
        .zip(sa.iter().zip(&sc))
        .map(|(tr, (&a, &c))| EvalItem {
            id: tr.id.clone(),
            score_accomplice: a,
            score_criminal: c,
            success: restoration_success_scores(a, c, t),
        })
        .collect();
    Ok(EvalReport::from_items(items, t))
}
