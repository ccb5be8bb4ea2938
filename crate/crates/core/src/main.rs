use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fdgan::dataset::{generate, Dataset, DatasetConfig, Split};
use fdgan::eval::{calibrate_matcher, evaluate, train_matcher, EmbeddingMatcher, MatcherTrainConfig, DEFAULT_FAR};
use fdgan::morph::{morph, MorphParams};
use fdgan::net::Checkpoint;
use fdgan::train::{train, TrainConfig};
use fdgan::{Error, LandmarkSet, RasterImage, Result};

#[derive(Parser)]
#[command(name = "fdgan", version, about = "Face morphing and FD-GAN de-morphing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options every subcommand takes.
#[derive(Args)]
struct Common {
    /// Overrides the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Morph two faces given their landmark files.
    Morph {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image1: PathBuf,
        #[arg(long)]
        landmarks1: PathBuf,
        #[arg(long)]
        image2: PathBuf,
        #[arg(long)]
        landmarks2: PathBuf,
        /// Pixel blending weight of the second image.
        #[arg(long)]
        alpha: Option<f64>,
        /// Geometry weight of the second image.
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Synthesize a face corpus and its morph triplets.
    Dataset {
        #[command(flatten)]
        common: Common,
    },
    /// Train and calibrate the embedding matcher on a dataset.
    Matcher {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = DEFAULT_FAR)]
        far: f64,
    },
    /// Train FD-GAN on a dataset's training split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Overrides the step count from the config file.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Restore the accomplice from a morph and the criminal's image.
    Demorph {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        aux: PathBuf,
        #[arg(long)]
        morphed: PathBuf,
    },
    /// Restoration accuracy of a checkpoint on a dataset split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        matcher: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
}

#[derive(serde::Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct MorphConfig {
    alpha: Option<f64>,
    beta: Option<f64>,
}

fn read_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => toml::from_str(&std::fs::read_to_string(p)?).map_err(|e| Error::Config(e.to_string())),
        None => Ok(T::default()),
    }
}

fn pick_split(ds: Dataset, name: &str) -> Result<Split> {
    match name {
        "train" => Ok(ds.splits.train),
        "dev" => Ok(ds.splits.dev),
        "test" => Ok(ds.splits.test),
        other => Err(Error::Config(format!("unknown split {other:?}"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Morph { common, image1, landmarks1, image2, landmarks2, alpha, beta } => {
            let cfg: MorphConfig = read_toml(common.config.as_deref())?;
            let alpha = alpha.or(cfg.alpha).unwrap_or(0.5);
            let beta = beta.or(cfg.beta).unwrap_or(0.5);
            let out = morph(
                &RasterImage::load_png(image1)?,
                &LandmarkSet::load_json(landmarks1)?,
                &RasterImage::load_png(image2)?,
                &LandmarkSet::load_json(landmarks2)?,
                MorphParams::new(alpha, beta)?,
            )?;
            out.save_png(&common.out)
        }
        Command::Dataset { common } => {
            let mut cfg = match &common.config {
                Some(p) => DatasetConfig::load(p)?,
                None => DatasetConfig::default(),
            };
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let ds = generate(&cfg)?;
            ds.save(&common.out)?;
            eprintln!(
                "wrote {} train, {} dev, {} test triplets to {}",
                ds.splits.train.triplets.len(),
                ds.splits.dev.triplets.len(),
                ds.splits.test.triplets.len(),
                common.out.display()
            );
            Ok(())
        }
        Command::Matcher { common, dataset, far } => {
            let mut cfg: MatcherTrainConfig = match &common.config {
                Some(p) => MatcherTrainConfig::from_toml_str(&std::fs::read_to_string(p)?)?,
                None => MatcherTrainConfig::default(),
            };
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let ds = Dataset::load(dataset)?;
            let mut m = train_matcher(&ds.matcher_train, &cfg)?;
            let t = calibrate_matcher(&mut m, &ds.calibration, far)?;
            m.save(&common.out)?;
            eprintln!("matcher threshold {t} at FAR {far}");
            Ok(())
        }
        Command::Train { common, dataset, steps } => {
            let mut cfg = match &common.config {
                Some(p) => TrainConfig::load(p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(s) = steps {
                cfg.steps = s;
            }
            cfg.validate()?;
            let ds = Dataset::load(dataset)?;
            let outcome = train(&cfg, &ds.splits.train.triplets, Some(&common.out))?;
            if let Some(last) = outcome.log.last() {
                eprintln!("step {}: {}", last.step, last.log_line());
            }
            Ok(())
        }
        Command::Demorph { common, checkpoint, aux, morphed } => {
            let ck = Checkpoint::load(checkpoint)?;
            let aux = RasterImage::load_png(aux)?;
            let morphed = RasterImage::load_png(morphed)?;
            let out = fdgan::eval::demorph(&ck.store, &ck.net, &[&aux], &[&morphed])?;
            out[0].save_png(&common.out)
        }
        Command::Eval { common, checkpoint, dataset, matcher, split } => {
            let ck = Checkpoint::load(checkpoint)?;
            let m = EmbeddingMatcher::load(matcher)?;
            let split = pick_split(Dataset::load(dataset)?, &split)?;
            let report = evaluate(&split.triplets, &ck.store, &ck.net, &m)?;
            std::fs::write(&common.out, report.to_json()?)?;
            eprintln!("accuracy {} ({} / {})", report.accuracy, report.successes, report.total);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
