//! `synth`: writes train, validation and test splits for a profile.

use std::fs;
use std::path::{Path, PathBuf};

use balsurr::datagen::{
    figure1_distribution, gaussian_mixture, longtail_counts, random_means, step_counts,
    stratified_split, subsample, Dataset, RNG_ALGORITHM,
};
use balsurr::Error;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetConfig, Profile};
use crate::{derive_seed, CliError};

/// The three splits of one synthesized dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Contents of `data/meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitsMeta {
    pub profile: String,
    pub n: usize,
    pub d: usize,
    pub imb_ratio: f64,
    pub seed: u64,
    pub rng: String,
    pub train_counts: Vec<u64>,
    pub val_counts: Vec<u64>,
    pub test_counts: Vec<u64>,
}

pub fn data_dir(out: &Path) -> PathBuf {
    out.join("data")
}

/// Target class sizes of the profile for a largest class of `m_max`.
fn target_counts(cfg: &DatasetConfig, m_max: u64) -> Result<Vec<u64>, CliError> {
    let counts = match cfg.profile {
        Profile::Longtail => longtail_counts(cfg.n, m_max, cfg.imb_ratio)?,
        Profile::Step => step_counts(cfg.n, m_max, cfg.imb_ratio, cfg.minority_fraction)?,
        Profile::Gaussian | Profile::Figure1 => vec![m_max; cfg.n],
    };
    Ok(counts)
}

/// Balanced Gaussian pool reduced to the profile's counts, so train and
/// test share one reduction.
fn gaussian_split(cfg: &DatasetConfig, m_max: u64, tag: u64) -> Result<Dataset, CliError> {
    let means = random_means(cfg.n, cfg.d, cfg.separation, derive_seed(cfg.seed, 0));
    let scales = vec![cfg.scale; cfg.n];
    let pool = gaussian_mixture(
        cfg.n,
        cfg.d,
        &vec![m_max; cfg.n],
        &means,
        &scales,
        derive_seed(cfg.seed, tag),
    )?;
    let target = target_counts(cfg, m_max)?;
    Ok(
        subsample(&pool, &target, derive_seed(cfg.seed, tag + 10))?
            .with_profile(cfg.profile.name()),
    )
}

/// Generates the three splits in memory.
pub fn synthesize(cfg: &DatasetConfig) -> Result<Splits, CliError> {
    let (train, test) = match cfg.profile {
        Profile::Figure1 => (
            figure1_distribution(cfg.m_max as usize, derive_seed(cfg.seed, 1))?,
            figure1_distribution(cfg.test_m_max() as usize, derive_seed(cfg.seed, 2))?,
        ),
        _ => (
            gaussian_split(cfg, cfg.m_max, 1)?,
            gaussian_split(cfg, cfg.test_m_max(), 2)?,
        ),
    };
    let (train, val) = stratified_split(&train, cfg.val_fraction, derive_seed(cfg.seed, 5))
        .map_err(|e| match e {
            Error::InsufficientExamples {
                class, available, ..
            } => CliError::Config(format!(
                "class {} has {available} training example(s); a validation split needs 2",
                class + 1
            )),
            other => other.into(),
        })?;
    Ok(Splits { train, val, test })
}

/// Writes `data/{train,val,test}.csv` with sidecars and `data/meta.json`.
pub fn cmd_synth(cfg: &DatasetConfig, out: &Path) -> Result<SplitsMeta, CliError> {
    let splits = synthesize(cfg)?;
    let dir = data_dir(out);
    fs::create_dir_all(&dir)?;
    for (name, data) in [
        ("train", &splits.train),
        ("val", &splits.val),
        ("test", &splits.test),
    ] {
        data.save(&dir.join(format!("{name}.csv")))?;
    }
    let meta = SplitsMeta {
        profile: cfg.profile.name().to_string(),
        n: cfg.n,
        d: splits.train.dim(),
        imb_ratio: cfg.imb_ratio,
        seed: cfg.seed,
        rng: RNG_ALGORITHM.to_string(),
        train_counts: splits.train.counts().to_vec(),
        val_counts: splits.val.counts().to_vec(),
        test_counts: splits.test.counts().to_vec(),
    };
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(dir.join("meta.json"), text + "\n")?;
    Ok(meta)
}

pub fn load_splits(out: &Path) -> Result<Splits, CliError> {
    let dir = data_dir(out);
    let load = |name: &str| {
        let path = dir.join(format!("{name}.csv"));
        Dataset::load(&path)
            .map_err(|e| CliError::Config(format!("{}: {e} (run `synth` first)", path.display())))
    };
    Ok(Splits {
        train: load("train")?,
        val: load("val")?,
        test: load("test")?,
    })
}
