//! Imbalanced synthetic datasets, count profiles and finite joint
//! distributions for the theory checks.
//!
//! All randomness comes from `ChaCha20Rng::seed_from_u64(seed)`; the
//! algorithm name is recorded in [`DatasetMeta::rng`].

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::ClassStats;

/// Identifier of the generator behind every seeded draw.
pub const RNG_ALGORITHM: &str = "chacha20";

pub(crate) fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub profile: String,
    pub imb_ratio: f64,
    pub seed: u64,
    pub rng: String,
    pub n_classes: usize,
    pub counts: Vec<u64>,
}

/// Labeled feature vectors. Labels are 0-based class indices and every
/// class has at least one example.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    n: usize,
    meta: DatasetMeta,
}

fn count_labels(labels: &[usize], n: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n];
    for &y in labels {
        counts[y] += 1;
    }
    counts
}

impl Dataset {
    /// Builds a dataset; `meta.counts`, `meta.imb_ratio` and
    /// `meta.n_classes` are recomputed from the labels.
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        n: usize,
        mut meta: DatasetMeta,
    ) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Dimension {
                expected: features.len(),
                got: labels.len(),
            });
        }
        if n < 2 {
            return Err(Error::invalid("n", "need at least two classes"));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= n) {
            return Err(Error::Label { label, n });
        }
        let d = features.first().map_or(0, Vec::len);
        if let Some(bad) = features.iter().find(|f| f.len() != d) {
            return Err(Error::Dimension {
                expected: d,
                got: bad.len(),
            });
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        let counts = count_labels(&labels, n);
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyClass(k));
        }
        meta.imb_ratio = imbalance_ratio(&counts)?;
        meta.n_classes = n;
        meta.counts = counts;
        Ok(Self {
            features,
            labels,
            n,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn with_profile(mut self, profile: &str) -> Self {
        self.meta.profile = profile.to_string();
        self
    }

    pub fn counts(&self) -> &[u64] {
        &self.meta.counts
    }

    pub fn class_stats(&self) -> ClassStats {
        ClassStats::from_counts(&self.meta.counts).expect("dataset classes are non-empty")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.features
            .iter()
            .map(Vec::as_slice)
            .zip(self.labels.iter().copied())
    }

    fn select(&self, idx: &[usize], profile: &str, seed: u64) -> Result<Dataset> {
        let features = idx.iter().map(|&i| self.features[i].clone()).collect();
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        let meta = DatasetMeta {
            profile: profile.to_string(),
            seed,
            ..self.meta.clone()
        };
        Dataset::new(features, labels, self.n, meta)
    }

    /// CSV with header `f0,...,f{d-1},label`, 17 significant digits and
    /// 1-based labels.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.dim();
        let header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
        writeln!(w, "{},label", header.join(","))?;
        for (x, y) in self.iter() {
            for v in x {
                write!(w, "{v:.16e},")?;
            }
            writeln!(w, "{}", y + 1)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, meta: DatasetMeta) -> Result<Self> {
        let bad = |line: usize, why: &str| Error::invalid("csv", format!("line {line}: {why}"));
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| bad(1, "missing header"))?
            .map_err(|e| bad(1, &e.to_string()))?;
        let cols = header.trim().split(',').count();
        if cols < 1 || header.trim().rsplit(',').next() != Some("label") {
            return Err(bad(1, "last column must be `label`"));
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| bad(i + 2, &e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != cols {
                return Err(bad(i + 2, "wrong number of fields"));
            }
            let x = fields[..cols - 1]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(i + 2, &e.to_string()))?;
            let y: usize = fields[cols - 1]
                .parse()
                .map_err(|_| bad(i + 2, "label must be a positive integer"))?;
            if y == 0 {
                return Err(bad(i + 2, "labels are 1-based"));
            }
            features.push(x);
            labels.push(y - 1);
        }
        let n = meta.n_classes;
        Dataset::new(features, labels, n, meta)
    }

    /// Writes `path` as CSV and the metadata to the `.json` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::invalid("path", format!("{}: {e}", path.display()));
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(io)?;
        fs::write(path, buf).map_err(io)?;
        let meta = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        fs::write(sidecar(path), meta + "\n").map_err(io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let io = |e: std::io::Error| Error::invalid("path", format!("{}: {e}", path.display()));
        let meta_text = fs::read_to_string(sidecar(path)).map_err(io)?;
        let meta: DatasetMeta =
            serde_json::from_str(&meta_text).map_err(|e| Error::invalid("meta", e.to_string()))?;
        let file = fs::File::open(path).map_err(io)?;
        Dataset::read_csv(BufReader::new(file), meta)
    }
}

/// Metadata sidecar path for a dataset CSV.
pub fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn meta(profile: &str, seed: u64) -> DatasetMeta {
    DatasetMeta {
        profile: profile.to_string(),
        imb_ratio: 1.0,
        seed,
        rng: RNG_ALGORITHM.to_string(),
        n_classes: 0,
        counts: Vec::new(),
    }
}

fn round_half_up(v: f64) -> u64 {
    (v + 0.5).floor() as u64
}

fn check_ratio(imb_ratio: f64) -> Result<()> {
    if !(imb_ratio >= 1.0 && imb_ratio.is_finite()) {
        return Err(Error::invalid(
            "imb_ratio",
            format!("{imb_ratio} must be >= 1"),
        ));
    }
    Ok(())
}

/// Exponentially decaying class sizes `m_max · ρ^{-(k-1)/(n-1)}`.
pub fn longtail_counts(n: usize, m_max: u64, imb_ratio: f64) -> Result<Vec<u64>> {
    if n < 2 {
        return Err(Error::invalid("n", "need at least two classes"));
    }
    if m_max < 1 {
        return Err(Error::invalid("m_max", "must be >= 1"));
    }
    check_ratio(imb_ratio)?;
    Ok((0..n)
        .map(|k| {
            let e = -(k as f64) / (n - 1) as f64;
            round_half_up(m_max as f64 * imb_ratio.powf(e)).max(1)
        })
        .collect())
}

/// Two-level sizes: the last `⌈n · minority_fraction⌉` classes get
/// `m_maj / ρ`, the rest `m_maj`.
pub fn step_counts(
    n: usize,
    m_maj: u64,
    imb_ratio: f64,
    minority_fraction: f64,
) -> Result<Vec<u64>> {
    if n < 2 {
        return Err(Error::invalid("n", "need at least two classes"));
    }
    if m_maj < 1 {
        return Err(Error::invalid("m_maj", "must be >= 1"));
    }
    check_ratio(imb_ratio)?;
    if !(minority_fraction > 0.0 && minority_fraction < 1.0) {
        return Err(Error::invalid(
            "minority_fraction",
            format!("{minority_fraction} outside (0, 1)"),
        ));
    }
    let minority = ((n as f64 * minority_fraction).ceil() as usize).min(n);
    let small = round_half_up(m_maj as f64 / imb_ratio).max(1);
    Ok((0..n)
        .map(|k| if k >= n - minority { small } else { m_maj })
        .collect())
}

pub fn imbalance_ratio(counts: &[u64]) -> Result<f64> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::invalid("counts", "every count must be >= 1"));
    }
    let max = *counts.iter().max().expect("non-empty");
    let min = *counts.iter().min().expect("non-empty");
    Ok(max as f64 / min as f64)
}

/// Uniform without-replacement subsample per class. Selected examples keep
/// their original order.
pub fn subsample(data: &Dataset, target: &[u64], seed: u64) -> Result<Dataset> {
    let n = data.n_classes();
    if target.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: target.len(),
        });
    }
    let mut rng = rng_from_seed(seed);
    let mut keep = Vec::new();
    for (class, &want) in target.iter().enumerate() {
        let members: Vec<usize> = (0..data.len())
            .filter(|&i| data.labels[i] == class)
            .collect();
        if want as usize > members.len() {
            return Err(Error::InsufficientExamples {
                class,
                available: members.len(),
                requested: want as usize,
            });
        }
        keep.extend(
            sample(&mut rng, members.len(), want as usize)
                .into_iter()
                .map(|j| members[j]),
        );
    }
    keep.sort_unstable();
    let profile = data.meta.profile.clone();
    data.select(&keep, &profile, seed)
}

/// Splits off `fraction` of every class (at least one example each) as a
/// held-out set. Returns `(rest, held_out)`.
pub fn stratified_split(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(
            "fraction",
            format!("{fraction} outside (0, 1)"),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let mut held = Vec::new();
    let mut rest = Vec::new();
    for class in 0..data.n_classes() {
        let members: Vec<usize> = (0..data.len())
            .filter(|&i| data.labels[i] == class)
            .collect();
        if members.len() < 2 {
            return Err(Error::InsufficientExamples {
                class,
                available: members.len(),
                requested: 2,
            });
        }
        let k =
            (round_half_up(members.len() as f64 * fraction) as usize).clamp(1, members.len() - 1);
        let chosen = sample(&mut rng, members.len(), k).into_vec();
        let mut mask = vec![false; members.len()];
        chosen.iter().for_each(|&j| mask[j] = true);
        for (j, &i) in members.iter().enumerate() {
            if mask[j] {
                held.push(i);
            } else {
                rest.push(i);
            }
        }
    }
    held.sort_unstable();
    rest.sort_unstable();
    let profile = data.meta.profile.clone();
    Ok((
        data.select(&rest, &profile, seed)?,
        data.select(&held, &profile, seed)?,
    ))
}

/// Isotropic Gaussian classes: `counts[k]` draws around `means[k]` with
/// standard deviation `scales[k]`.
pub fn gaussian_mixture(
    n: usize,
    d: usize,
    counts: &[u64],
    means: &[Vec<f64>],
    scales: &[f64],
    seed: u64,
) -> Result<Dataset> {
    for (name, len) in [
        ("counts", counts.len()),
        ("means", means.len()),
        ("scales", scales.len()),
    ] {
        if len != n {
            return Err(Error::invalid(
                name,
                format!("expected {n} entries, got {len}"),
            ));
        }
    }
    if d == 0 {
        return Err(Error::invalid("d", "dimension must be >= 1"));
    }
    if let Some(bad) = means.iter().find(|m| m.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            got: bad.len(),
        });
    }
    if scales.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::invalid("scales", "must be finite and >= 0"));
    }
    let mut rng = rng_from_seed(seed);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for k in 0..n {
        for _ in 0..counts[k] {
            let x = means[k]
                .iter()
                .map(|mu| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mu + scales[k] * z
                })
                .collect();
            features.push(x);
            labels.push(k);
        }
    }
    Dataset::new(features, labels, n, meta("gaussian", seed))
}

/// `n` class means drawn as isotropic Gaussian directions scaled to norm
/// `separation`.
pub fn random_means(n: usize, d: usize, separation: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let r = v
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            v.iter().map(|x| x * separation / r).collect()
        })
        .collect()
}

/// Two-class planar distribution with `x₁ ~ U[0, 1]`,
/// `x₂ | x₁, y ~ N(y·x₁, x₁²)` and `P(y = +1) = 1/8`. Class 0 is `y = +1`.
pub fn figure1_distribution(m: usize, seed: u64) -> Result<Dataset> {
    if m < 2 {
        return Err(Error::invalid("m", "need at least two samples"));
    }
    let mut rng = rng_from_seed(seed);
    let mut features = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for _ in 0..m {
        let positive = rng.random::<f64>() < 0.125;
        let sign = if positive { 1.0 } else { -1.0 };
        let x1: f64 = rng.random();
        let z: f64 = StandardNormal.sample(&mut rng);
        features.push(vec![x1, sign * x1 + x1 * z]);
        labels.push(if positive { 0 } else { 1 });
    }
    Dataset::new(features, labels, 2, meta("figure1", seed))
}

/// A joint distribution over finitely many points `x` and `n` classes,
/// stored as `joint[x][y]`. Every point and every class carries positive
/// mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJoint {
    joint: Vec<Vec<f64>>,
}

impl DiscreteJoint {
    pub const SUM_TOL: f64 = 1e-12;

    pub fn new(joint: Vec<Vec<f64>>) -> Result<Self> {
        let n = joint.first().map_or(0, Vec::len);
        if joint.is_empty() || n < 2 {
            return Err(Error::invalid("joint", "need >= 1 point and >= 2 classes"));
        }
        if let Some(row) = joint.iter().find(|r| r.len() != n) {
            return Err(Error::Dimension {
                expected: n,
                got: row.len(),
            });
        }
        if joint
            .iter()
            .flatten()
            .any(|p| !(p.is_finite() && *p >= 0.0))
        {
            return Err(Error::invalid("joint", "entries must be finite and >= 0"));
        }
        let total: f64 = joint.iter().flatten().sum();
        if (total - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::invalid("joint", format!("entries sum to {total}")));
        }
        let out = Self { joint };
        if out.p_x().iter().any(|p| *p <= 0.0) {
            return Err(Error::invalid("joint", "every point needs positive mass"));
        }
        if let Some(k) = out.p_y().iter().position(|p| *p <= 0.0) {
            return Err(Error::EmptyClass(k));
        }
        Ok(out)
    }

    pub fn num_x(&self) -> usize {
        self.joint.len()
    }

    pub fn n_classes(&self) -> usize {
        self.joint[0].len()
    }

    pub fn joint(&self) -> &[Vec<f64>] {
        &self.joint
    }

    pub fn p_x(&self) -> Vec<f64> {
        self.joint.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn p_y(&self) -> Vec<f64> {
        (0..self.n_classes())
            .map(|y| self.joint.iter().map(|r| r[y]).sum())
            .collect()
    }

    /// `p(· | x)`.
    pub fn conditional(&self, x: usize) -> Vec<f64> {
        let row = &self.joint[x];
        let px: f64 = row.iter().sum();
        row.iter().map(|p| p / px).collect()
    }

    /// `p(x | y)` over all points.
    pub fn x_given_y(&self, y: usize) -> Vec<f64> {
        let py: f64 = self.joint.iter().map(|r| r[y]).sum();
        self.joint.iter().map(|r| r[y] / py).collect()
    }

    pub fn class_stats(&self) -> Result<ClassStats> {
        let p_y = self.p_y();
        let total: f64 = p_y.iter().sum();
        ClassStats::from_priors(&p_y.iter().map(|p| p / total).collect::<Vec<_>>())
    }
}

/// Random joint with every class marginal at least `p_min_floor`: positive
/// uniform mass per cell, normalized, then mixed with the uniform joint just
/// enough to lift the smallest marginal to the floor.
pub fn random_discrete_joint(
    num_x: usize,
    n: usize,
    p_min_floor: f64,
    seed: u64,
) -> Result<DiscreteJoint> {
    if num_x < 1 || n < 2 {
        return Err(Error::invalid("shape", "need num_x >= 1 and n >= 2"));
    }
    let cap = 1.0 / n as f64;
    if !(p_min_floor > 0.0 && p_min_floor < cap) {
        return Err(Error::invalid(
            "p_min_floor",
            format!("{p_min_floor} outside (0, 1/{n})"),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let mut joint: Vec<Vec<f64>> = (0..num_x)
        .map(|_| (0..n).map(|_| 1.0 - rng.random::<f64>()).collect())
        .collect();
    let total: f64 = joint.iter().flatten().sum();
    joint.iter_mut().flatten().for_each(|p| *p /= total);

    let p_y: Vec<f64> = (0..n).map(|y| joint.iter().map(|r| r[y]).sum()).collect();
    let low = p_y.iter().copied().fold(f64::INFINITY, f64::min);
    if low < p_min_floor {
        // (1 - a)·low + a/n = floor, nudged up to absorb rounding
        let a = ((p_min_floor - low) / (cap - low) * (1.0 + 1e-9)).min(1.0);
        let u = 1.0 / (num_x * n) as f64;
        joint
            .iter_mut()
            .flatten()
            .for_each(|p| *p = (1.0 - a) * *p + a * u);
        let total: f64 = joint.iter().flatten().sum();
        joint.iter_mut().flatten().for_each(|p| *p /= total);
    }
    DiscreteJoint::new(joint)
}
