//! `train`: one run per grid point and seed, then a sweep table and a
//! per-loss summary picked by validation balanced error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use balsurr::datagen::Dataset;
use balsurr::metrics::confusion;
use balsurr::trainer::{train, AnyModel, EpochRecord, LinearModel, MlpModel};
use balsurr::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, LossPoint, ModelKind};
use crate::synth::{load_splits, Splits};
use crate::{derive_seed, fmt_float, mean_sd, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Diverged,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub hash: String,
    pub family: String,
    pub params: String,
    pub profile: String,
    pub imb_ratio: f64,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_balanced_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_balanced_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_per_class_error: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_final_loss: Option<f64>,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }
}

/// Aggregate of one grid point over its seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSummary {
    pub entry: usize,
    pub family: String,
    pub params: String,
    pub hash: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub val_mean: Option<f64>,
    pub test_mean: Option<f64>,
    pub test_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub runs: Vec<RunRecord>,
    pub points: Vec<PointSummary>,
    /// Index into `points` of the best point of each `[[loss]]` entry.
    pub best: Vec<Option<usize>>,
}

pub fn runs_dir(out: &Path) -> PathBuf {
    out.join("runs")
}

/// First 16 hex digits of the SHA-256 of the canonical JSON of the dataset,
/// the grid point and the training section without its seed.
pub fn config_hash(cfg: &ExperimentConfig, point: &LossPoint) -> String {
    let mut train = cfg.train.clone();
    train.seed = 0;
    let canonical = serde_json::json!({
        "dataset": cfg.dataset,
        "loss": point,
        "train": train,
    });
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    digest.iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn build_model(cfg: &ExperimentConfig, n: usize, d: usize, seed: u64) -> Result<AnyModel, Error> {
    let init = derive_seed(seed, 20);
    Ok(match cfg.train.model {
        ModelKind::Linear => {
            let mut m = LinearModel::new(n, d, init)?.with_bias(cfg.train.fit_bias);
            if let Some(b) = cfg.train.norm_bound {
                m = m.with_norm_bound(b)?;
            }
            AnyModel::Linear(m)
        }
        ModelKind::Mlp => AnyModel::Mlp(MlpModel::new(d, &cfg.train.hidden, n, init)?),
    })
}

fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,loss,lr\n");
    for r in history {
        let _ = writeln!(s, "{},{},{}", r.epoch, fmt_float(r.loss), fmt_float(r.lr));
    }
    s
}

fn to_json(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes") + "\n"
}

struct Job<'a> {
    entry: usize,
    point: &'a LossPoint,
    hash: String,
    seed: u64,
}

/// Trains one run and writes its directory. Divergence and other library
/// errors become a failed record; only I/O errors propagate.
fn run_one(
    cfg: &ExperimentConfig,
    splits: &Splits,
    job: &Job,
    dir: &Path,
) -> Result<RunRecord, CliError> {
    let train_data = &splits.train;
    let mut record = RunRecord {
        hash: job.hash.clone(),
        family: job.point.family.name().to_string(),
        params: job.point.label(),
        profile: train_data.meta().profile.clone(),
        imb_ratio: cfg.dataset.imb_ratio,
        seed: job.seed,
        status: RunStatus::Ok,
        error: None,
        val_balanced_error: None,
        test_balanced_error: None,
        test_per_class_error: None,
        test_accuracy: None,
        train_final_loss: None,
    };
    fs::create_dir_all(dir)?;
    let outcome = (|| -> Result<(AnyModel, Vec<EpochRecord>), Error> {
        let spec = job.point.to_spec(&train_data.class_stats());
        let mut model = build_model(cfg, train_data.n_classes(), train_data.dim(), job.seed)?;
        let history = train(
            &mut model,
            train_data,
            &spec,
            &cfg.train.train_config(job.seed),
        )?;
        Ok((model, history))
    })();
    match outcome {
        Ok((model, history)) => {
            let eval = |data: &Dataset| confusion(&model, data);
            let val = eval(&splits.val)?;
            let test = eval(&splits.test)?;
            let wants = |m: &str| cfg.eval.metrics.iter().any(|x| x == m);
            record.val_balanced_error = Some(val.balanced_error()?);
            if wants("balanced_error") {
                record.test_balanced_error = Some(test.balanced_error()?);
            }
            if wants("per_class_error") {
                record.test_per_class_error = Some(test.per_class_error()?);
            }
            if wants("accuracy") {
                record.test_accuracy = Some(test.accuracy());
            }
            record.train_final_loss = history.last().map(|r| r.loss);
            fs::write(dir.join("model.json"), to_json(&model.checkpoint()))?;
            fs::write(dir.join("history.csv"), history_csv(&history))?;
        }
        Err(e) => {
            record.status = RunStatus::Diverged;
            record.error = Some(e.to_string());
            let _ = fs::remove_file(dir.join("model.json"));
            fs::write(dir.join("history.csv"), history_csv(&[]))?;
        }
    }
    fs::write(dir.join("metrics.json"), to_json(&record))?;
    Ok(record)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

fn summarize(
    jobs: &[Job],
    runs: &[RunRecord],
    n_entries: usize,
) -> (Vec<PointSummary>, Vec<Option<usize>>) {
    let mut by_hash: BTreeMap<(usize, &str), Vec<usize>> = BTreeMap::new();
    let mut order = Vec::new();
    for (i, job) in jobs.iter().enumerate() {
        let key = (job.entry, job.hash.as_str());
        if !by_hash.contains_key(&key) {
            order.push(key);
        }
        by_hash.entry(key).or_default().push(i);
    }
    let mut points = Vec::new();
    for key in order {
        let idx = &by_hash[&key];
        let ok: Vec<&RunRecord> = idx
            .iter()
            .map(|&i| &runs[i])
            .filter(|r| r.is_ok())
            .collect();
        let vals: Vec<f64> = ok.iter().filter_map(|r| r.val_balanced_error).collect();
        let tests: Vec<f64> = ok.iter().filter_map(|r| r.test_balanced_error).collect();
        let (test_mean, test_sd) = if tests.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_sd(&tests);
            (Some(m), Some(s))
        };
        let first = &runs[idx[0]];
        points.push(PointSummary {
            entry: key.0,
            family: first.family.clone(),
            params: first.params.clone(),
            hash: key.1.to_string(),
            n_ok: ok.len(),
            n_failed: idx.len() - ok.len(),
            val_mean: (!vals.is_empty()).then(|| mean_sd(&vals).0),
            test_mean,
            test_sd,
        });
    }
    // failed points never win; ties keep the earlier grid point
    let best = (0..n_entries)
        .map(|e| {
            points
                .iter()
                .enumerate()
                .filter(|(_, p)| p.entry == e && p.n_failed == 0)
                .filter_map(|(i, p)| p.val_mean.map(|v| (i, v)))
                .fold(None, |acc: Option<(usize, f64)>, (i, v)| match acc {
                    Some((_, bv)) if bv <= v => acc,
                    _ => Some((i, v)),
                })
                .map(|(i, _)| i)
        })
        .collect();
    (points, best)
}

pub const SWEEP_HEADER: &str =
    "entry,family,params,hash,n_ok,n_failed,val_balanced_error_mean,test_balanced_error_mean,test_balanced_error_sd";
pub const SUMMARY_HEADER: &str =
    "family,params,profile,imb_ratio,n_seeds,val_balanced_error_mean,test_balanced_error_mean,test_balanced_error_sd";

/// Runs every grid point for `repeats` seeds on the splits under `out`,
/// with at most `jobs` runs in flight.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    out: &Path,
    jobs: usize,
) -> Result<TrainSummary, CliError> {
    let splits = load_splits(out)?;
    if splits.train.n_classes() != cfg.dataset.n {
        return Err(CliError::Config(format!(
            "data under {} has {} classes, config has {}",
            out.display(),
            splits.train.n_classes(),
            cfg.dataset.n
        )));
    }
    let grid = cfg.grid()?;
    let mut work = Vec::new();
    for (entry, points) in grid.iter().enumerate() {
        for point in points {
            let hash = config_hash(cfg, point);
            for r in 0..cfg.repeats as u64 {
                work.push(Job {
                    entry,
                    point,
                    hash: hash.clone(),
                    seed: cfg.train.seed + r,
                });
            }
        }
    }
    let root = runs_dir(out);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    // identical points from different entries share a directory; run each once
    let mut first: BTreeMap<(&str, u64), usize> = BTreeMap::new();
    for (i, job) in work.iter().enumerate() {
        first.entry((job.hash.as_str(), job.seed)).or_insert(i);
    }
    let unique: Vec<usize> = first.values().copied().collect();
    let done: Vec<RunRecord> = pool.install(|| {
        unique
            .par_iter()
            .map(|&i| {
                let job = &work[i];
                let dir = root.join(&job.hash).join(job.seed.to_string());
                run_one(cfg, &splits, job, &dir)
            })
            .collect::<Result<_, _>>()
    })?;
    let by_job: BTreeMap<usize, &RunRecord> = unique.iter().copied().zip(&done).collect();
    let runs: Vec<RunRecord> = work
        .iter()
        .map(|job| by_job[&first[&(job.hash.as_str(), job.seed)]].clone())
        .collect();

    let (points, best) = summarize(&work, &runs, grid.len());
    let mut sweep = format!("{SWEEP_HEADER}\n");
    for p in &points {
        let _ = writeln!(
            sweep,
            "{},{},{},{},{},{},{},{},{}",
            p.entry,
            p.family,
            p.params,
            p.hash,
            p.n_ok,
            p.n_failed,
            opt(p.val_mean),
            opt(p.test_mean),
            opt(p.test_sd)
        );
    }
    fs::write(out.join("sweep.csv"), sweep)?;
    let mut summary = format!("{SUMMARY_HEADER}\n");
    for b in best.iter().flatten() {
        let p = &points[*b];
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{},{}",
            p.family,
            p.params,
            cfg.dataset.profile.name(),
            fmt_float(cfg.dataset.imb_ratio),
            p.n_ok,
            opt(p.val_mean),
            opt(p.test_mean),
            opt(p.test_sd)
        );
    }
    fs::write(out.join("summary.csv"), summary)?;
    Ok(TrainSummary { runs, points, best })
}
