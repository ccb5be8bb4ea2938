//! Corpus assembly: identity-disjoint splits of morph triplets plus the
//! face sets used to train and calibrate the matcher, stored on disk as PNG
//! files indexed by a JSON manifest.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RasterImage;
use crate::morph::{morph, MorphParams};
use crate::synth::{render_aligned, SyntheticIdentity};

/// One de-morphing example: the morph of two identities plus both
/// contributors. The criminal is the live auxiliary input, the accomplice
/// is the face to restore.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingTriplet {
    pub id: String,
    pub criminal: RasterImage,
    pub accomplice: RasterImage,
    pub morphed: RasterImage,
    pub criminal_identity: u64,
    pub accomplice_identity: u64,
    pub params: MorphParams,
}

/// Identity counts per split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitSpec {
    /// 28 / 7 / 28 subjects.
    pub const REFERENCE: SplitSpec = SplitSpec { train: 28, dev: 7, test: 28 };

    /// The reference ratios scaled to `n` identities, each split non-empty.
    pub fn proportional(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Config(format!("need at least 3 identities, got {n}")));
        }
        let total = (Self::REFERENCE.train + Self::REFERENCE.dev + Self::REFERENCE.test) as f64;
        let dev = ((n as f64 * Self::REFERENCE.dev as f64 / total).round() as usize).max(1);
        let train = ((n as f64 * Self::REFERENCE.train as f64 / total).round() as usize).clamp(1, n - dev - 1);
        Ok(Self { train, dev, test: n - train - dev })
    }

    pub fn total(&self) -> usize {
        self.train + self.dev + self.test
    }
}

/// Fusion factors to draw from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorphGrid {
    pub alphas: Vec<f64>,
    pub beta: f64,
}

impl Default for MorphGrid {
    fn default() -> Self {
        Self { alphas: (1..=9).map(|k| k as f64 / 10.0).collect(), beta: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    pub image_size: usize,
    /// Identities shared by the train, dev and test splits.
    pub identities: usize,
    /// Explicit split sizes; proportional to 28/7/28 when absent.
    pub split: Option<SplitSpec>,
    /// Average number of morphs each identity contributes to.
    pub morphs_per_identity: usize,
    pub grid: MorphGrid,
    pub matcher_identities: usize,
    pub matcher_variations: usize,
    pub calibration_identities: usize,
    pub calibration_variations: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            image_size: 64,
            identities: 40,
            split: None,
            morphs_per_identity: 5,
            grid: MorphGrid::default(),
            matcher_identities: 60,
            matcher_variations: 12,
            calibration_identities: 30,
            calibration_variations: 4,
        }
    }
}

impl DatasetConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        let spec = match self.split {
            Some(s) => s,
            None => SplitSpec::proportional(self.identities)?,
        };
        if spec.total() != self.identities || self.identities < 3 {
            return Err(Error::Config(format!(
                "split {}/{}/{} does not partition {} identities",
                spec.train, spec.dev, spec.test, self.identities
            )));
        }
        Ok(spec)
    }
}

/// Identity seeds for the three groups, all distinct.
pub struct IdentityPools {
    pub triplets: Vec<SyntheticIdentity>,
    pub matcher: Vec<SyntheticIdentity>,
    pub calibration: Vec<SyntheticIdentity>,
}

pub fn identity_pools(config: &DatasetConfig) -> IdentityPools {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut seen = std::collections::HashSet::new();
    let mut draw = |n: usize| -> Vec<SyntheticIdentity> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let s: u64 = rng.gen();
            if seen.insert(s) {
                out.push(SyntheticIdentity::from_seed(s));
            }
        }
        out
    };
    IdentityPools {
        triplets: draw(config.identities),
        matcher: draw(config.matcher_identities),
        calibration: draw(config.calibration_identities),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub identities: Vec<SyntheticIdentity>,
    pub triplets: Vec<TrainingTriplet>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplits {
    pub train: Split,
    pub dev: Split,
    pub test: Split,
}

/// Variation index used for morph sources; kept clear of the small indices
/// used for enrollment and probe renders.
pub const MORPH_VARIATION_BASE: u64 = 1_000;

/// Builds morphs for one group of identities. Each morph yields two
/// triplets, one per contributor ordering.
pub fn build_split(
    name: &str,
    identities: &[SyntheticIdentity],
    morphs_per_identity: usize,
    grid: &MorphGrid,
    size: usize,
    rng: &mut impl Rng,
) -> Result<Split> {
    if grid.alphas.is_empty() {
        return Err(Error::Config("morph grid has no fusion factors".into()));
    }
    let n = identities.len();
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    pairs.shuffle(rng);
    let wanted = ((n * morphs_per_identity) as f64 / 2.0).round() as usize;
    pairs.truncate(wanted);
    let mut triplets = Vec::with_capacity(2 * pairs.len());
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let alpha = *grid.alphas.choose(rng).expect("non-empty grid");
        let params = MorphParams::new(alpha, grid.beta)?;
        let variation = MORPH_VARIATION_BASE + k as u64;
        let fa = render_aligned(&identities[i], variation, size)?;
        let fb = render_aligned(&identities[j], variation, size)?;
        let morphed = morph(&fa.image, &fa.landmarks, &fb.image, &fb.landmarks, params)?;
        let (sa, sb) = (identities[i].seed, identities[j].seed);
        triplets.push(TrainingTriplet {
            id: format!("{name}-{k:04}-ab"),
            criminal: fa.image.clone(),
            accomplice: fb.image.clone(),
            morphed: morphed.clone(),
            criminal_identity: sa,
            accomplice_identity: sb,
            params,
        });
        triplets.push(TrainingTriplet {
            id: format!("{name}-{k:04}-ba"),
            criminal: fb.image,
            accomplice: fa.image,
            morphed,
            criminal_identity: sb,
            accomplice_identity: sa,
            params,
        });
    }
    Ok(Split { identities: identities.to_vec(), triplets })
}

/// Partitions `identities` into disjoint train/dev/test groups (in order)
/// and builds each group's triplets.
pub fn build_triplets(
    identities: &[SyntheticIdentity],
    grid: &MorphGrid,
    split: SplitSpec,
    morphs_per_identity: usize,
    size: usize,
    seed: u64,
) -> Result<DatasetSplits> {
    if identities.len() < 3 {
        return Err(Error::Config(format!("need at least 3 identities, got {}", identities.len())));
    }
    if split.total() != identities.len() {
        return Err(Error::Config("split sizes do not partition the identities".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let (train, rest) = identities.split_at(split.train);
    let (dev, test) = rest.split_at(split.dev);
    Ok(DatasetSplits {
        train: build_split("train", train, morphs_per_identity, grid, size, &mut rng)?,
        dev: build_split("dev", dev, morphs_per_identity, grid, size, &mut rng)?,
        test: build_split("test", test, morphs_per_identity, grid, size, &mut rng)?,
    })
}

/// Labeled aligned faces.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FaceSet {
    pub images: Vec<RasterImage>,
    pub labels: Vec<usize>,
}

impl FaceSet {
    /// Renders `variations` images of each identity; labels index into
    /// `identities`.
    pub fn render(identities: &[SyntheticIdentity], variations: usize, size: usize) -> Result<Self> {
        let mut set = FaceSet::default();
        for (label, id) in identities.iter().enumerate() {
            for v in 0..variations {
                set.images.push(render_aligned(id, v as u64, size)?.image);
                set.labels.push(label);
            }
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

/// Everything the training and evaluation commands consume.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub splits: DatasetSplits,
    pub matcher_train: FaceSet,
    pub calibration: FaceSet,
}

pub fn generate(config: &DatasetConfig) -> Result<Dataset> {
    let spec = config.split_spec()?;
    if config.image_size < 16 || !config.image_size.is_power_of_two() {
        return Err(Error::Config(format!("image_size must be a power of two >= 16, got {}", config.image_size)));
    }
    let pools = identity_pools(config);
    let splits = build_triplets(
        &pools.triplets,
        &config.grid,
        spec,
        config.morphs_per_identity,
        config.image_size,
        config.seed,
    )?;
    Ok(Dataset {
        config: config.clone(),
        splits,
        matcher_train: FaceSet::render(&pools.matcher, config.matcher_variations, config.image_size)?,
        calibration: FaceSet::render(&pools.calibration, config.calibration_variations, config.image_size)?,
    })
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
struct TripletRecord {
    id: String,
    criminal: PathBuf,
    accomplice: PathBuf,
    morphed: PathBuf,
    criminal_identity: u64,
    accomplice_identity: u64,
    params: MorphParams,
}

#[derive(Serialize, Deserialize)]
struct SplitRecord {
    identities: Vec<u64>,
    triplets: Vec<TripletRecord>,
}

#[derive(Serialize, Deserialize)]
struct FaceRecord {
    path: PathBuf,
    label: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: DatasetConfig,
    train: SplitRecord,
    dev: SplitRecord,
    test: SplitRecord,
    matcher_train: Vec<FaceRecord>,
    calibration: Vec<FaceRecord>,
}

fn save_split(root: &Path, name: &str, split: &Split) -> Result<SplitRecord> {
    let dir = Path::new("triplets").join(name);
    std::fs::create_dir_all(root.join(&dir))?;
    let mut triplets = Vec::new();
    for t in &split.triplets {
        let rel = |role: &str| dir.join(format!("{}_{role}.png", t.id));
        let rec = TripletRecord {
            id: t.id.clone(),
            criminal: rel("criminal"),
            accomplice: rel("accomplice"),
            morphed: rel("morphed"),
            criminal_identity: t.criminal_identity,
            accomplice_identity: t.accomplice_identity,
            params: t.params,
        };
        t.criminal.save_png(root.join(&rec.criminal))?;
        t.accomplice.save_png(root.join(&rec.accomplice))?;
        t.morphed.save_png(root.join(&rec.morphed))?;
        triplets.push(rec);
    }
    Ok(SplitRecord { identities: split.identities.iter().map(|i| i.seed).collect(), triplets })
}

fn save_faces(root: &Path, name: &str, set: &FaceSet) -> Result<Vec<FaceRecord>> {
    let dir = Path::new("faces").join(name);
    std::fs::create_dir_all(root.join(&dir))?;
    let mut out = Vec::new();
    for (k, (img, &label)) in set.images.iter().zip(&set.labels).enumerate() {
        let path = dir.join(format!("{label:04}_{k:05}.png"));
        img.save_png(root.join(&path))?;
        out.push(FaceRecord { path, label });
    }
    Ok(out)
}

fn load_split(root: &Path, rec: SplitRecord) -> Result<Split> {
    let mut triplets = Vec::with_capacity(rec.triplets.len());
    for t in rec.triplets {
        triplets.push(TrainingTriplet {
            criminal: RasterImage::load_png(root.join(&t.criminal))?,
            accomplice: RasterImage::load_png(root.join(&t.accomplice))?,
            morphed: RasterImage::load_png(root.join(&t.morphed))?,
            id: t.id,
            criminal_identity: t.criminal_identity,
            accomplice_identity: t.accomplice_identity,
            params: t.params,
        });
    }
    let identities = rec.identities.into_iter().map(SyntheticIdentity::from_seed).collect();
    Ok(Split { identities, triplets })
}

fn load_faces(root: &Path, recs: Vec<FaceRecord>) -> Result<FaceSet> {
    let mut set = FaceSet::default();
    for r in recs {
        set.images.push(RasterImage::load_png(root.join(r.path))?);
        set.labels.push(r.label);
    }
    Ok(set)
}

impl Dataset {
    /// Writes PNG files and the manifest under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let root = dir.as_ref();
        std::fs::create_dir_all(root)?;
        let manifest = Manifest {
            config: self.config.clone(),
            train: save_split(root, "train", &self.splits.train)?,
            dev: save_split(root, "dev", &self.splits.dev)?,
            test: save_split(root, "test", &self.splits.test)?,
            matcher_train: save_faces(root, "matcher", &self.matcher_train)?,
            calibration: save_faces(root, "calibration", &self.calibration)?,
        };
        std::fs::write(root.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    /// Reads a dataset written by [`Dataset::save`]. Images round-trip
    /// through 8-bit PNG, so pixel values are quantized.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let root = dir.as_ref();
        let text = std::fs::read_to_string(root.join(MANIFEST_FILE))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("bad dataset manifest: {e}")))?;
        Ok(Self {
            config: m.config,
            splits: DatasetSplits {
                train: load_split(root, m.train)?,
                dev: load_split(root, m.dev)?,
                test: load_split(root, m.test)?,
            },
            matcher_train: load_faces(root, m.matcher_train)?,
            calibration: load_faces(root, m.calibration)?,
        })
    }
}
