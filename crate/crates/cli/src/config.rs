//! Experiment configuration, read from TOML.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use balsurr::losses::{default_gca_margins, ClassStats, LossFamily, LossSpec};
use balsurr::trainer::{Schedule, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default, rename = "loss")]
    pub losses: Vec<LossEntry>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default = "one")]
    pub repeats: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Longtail,
    Step,
    Figure1,
    Gaussian,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Longtail => "longtail",
            Profile::Step => "step",
            Profile::Figure1 => "figure1",
            Profile::Gaussian => "gaussian",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub profile: Profile,
    #[serde(default = "two")]
    pub n: usize,
    #[serde(default = "two")]
    pub d: usize,
    /// Largest training class (sample size for `figure1`).
    pub m_max: u64,
    #[serde(default = "unit")]
    pub imb_ratio: f64,
    #[serde(default = "half")]
    pub minority_fraction: f64,
    /// Largest test class before the same reduction (test size for
    /// `figure1`); defaults to `m_max`.
    #[serde(default)]
    pub test_m_max: Option<u64>,
    /// Norm of the Gaussian class means.
    #[serde(default = "three")]
    pub separation: f64,
    /// Per-class standard deviation of the Gaussian classes.
    #[serde(default = "unit")]
    pub scale: f64,
    #[serde(default = "tenth")]
    pub val_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn two() -> usize {
    2
}
fn unit() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn three() -> f64 {
    3.0
}
fn tenth() -> f64 {
    0.1
}

impl DatasetConfig {
    pub fn test_m_max(&self) -> u64 {
        self.test_m_max.unwrap_or(self.m_max)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Config(format!("[dataset] {msg}")));
        if self.profile == Profile::Figure1 && (self.n != 2 || self.d != 2) {
            return bad("figure1 has n = 2 and d = 2");
        }
        if self.n < 2 || self.d < 1 {
            return bad("need n >= 2 and d >= 1");
        }
        if self.m_max < 1 || self.test_m_max() < 1 {
            return bad("sample sizes must be >= 1");
        }
        if !(self.imb_ratio >= 1.0 && self.imb_ratio.is_finite()) {
            return bad("imb_ratio must be >= 1");
        }
        if !(self.minority_fraction > 0.0 && self.minority_fraction < 1.0) {
            return bad("minority_fraction must lie in (0, 1)");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        if !(self.separation >= 0.0 && self.scale >= 0.0) {
            return bad("separation and scale must be >= 0");
        }
        Ok(())
    }
}

/// A hyperparameter given as one value, a list (a grid), or `"default"`
/// for the standard search grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    One(f64),
    Many(Vec<f64>),
    Named(String),
}

/// One `[[loss]]` table: a family and its hyperparameter grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossEntry {
    pub family: String,
    #[serde(flatten)]
    pub params: BTreeMap<String, ParamValue>,
}

/// GCA margins of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Margins {
    /// Cube-root margins from the training counts.
    Default,
    Unit,
    Explicit(Vec<f64>),
}

/// One grid point: a family with every hyperparameter fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub family: LossFamily,
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margins: Option<Margins>,
}

fn decimal_grid(lo: u32, hi: u32, scale: f64) -> Vec<f64> {
    (lo..=hi).map(|k| k as f64 / scale).collect()
}

/// Standard search grid of a hyperparameter.
pub fn default_grid(family: LossFamily, param: &str) -> Option<Vec<f64>> {
    let grid = match (family, param) {
        (LossFamily::La, "tau") => vec![1.0],
        (LossFamily::Equal, "p") => decimal_grid(1, 9, 10.0),
        (LossFamily::Equal, "lambda") => [0.176, 0.5, 0.8, 1.5, 1.76, 2.0, 3.0, 5.0]
            .iter()
            .map(|v| v * 1e-3)
            .collect(),
        (LossFamily::Cb, "gamma") => {
            let mut g = decimal_grid(1, 9, 10.0);
            g.extend([0.99, 0.999, 0.9999]);
            g
        }
        (LossFamily::Focal, "gamma") => {
            let mut g = decimal_grid(0, 9, 10.0);
            g.extend((2..=20).map(|k| k as f64 * 0.5));
            g
        }
        (LossFamily::Ldam, "c") => {
            let mut g: Vec<f64> = (-4..=4).map(|e| 10f64.powi(e)).collect();
            g.extend((-4..=3).map(|e| 5.0 * 10f64.powi(e)));
            g.sort_by(f64::total_cmp);
            g
        }
        (LossFamily::Gce | LossFamily::Gla | LossFamily::Gca, "q") => decimal_grid(0, 9, 10.0),
        (LossFamily::Csmax, "rho") => vec![1.0],
        (LossFamily::Csmax, "psi_tau") => vec![1.0],
        _ => return None,
    };
    Some(grid)
}

fn family_params(family: LossFamily) -> &'static [&'static str] {
    match family {
        LossFamily::Ce | LossFamily::Wce => &[],
        LossFamily::La => &["tau"],
        LossFamily::Equal => &["p", "lambda"],
        LossFamily::Cb | LossFamily::Focal => &["gamma"],
        LossFamily::Ldam => &["c"],
        LossFamily::Gce | LossFamily::Gla | LossFamily::Gca => &["q"],
        LossFamily::Csmax => &["rho", "psi_tau"],
    }
}

impl LossEntry {
    /// Cartesian product of the hyperparameter grids, in sorted parameter
    /// order.
    pub fn expand(&self) -> Result<Vec<LossPoint>, CliError> {
        let family = LossFamily::parse(&self.family)
            .ok_or_else(|| CliError::Config(format!("unknown loss family `{}`", self.family)))?;
        let names = family_params(family);
        let mut margins = None;
        for key in self.params.keys() {
            if key == "margins" && family == LossFamily::Gca {
                continue;
            }
            if !names.contains(&key.as_str()) {
                return Err(CliError::Config(format!(
                    "{family}: unknown parameter `{key}`"
                )));
            }
        }
        if family == LossFamily::Gca {
            margins = Some(match self.params.get("margins") {
                None => Margins::Default,
                Some(ParamValue::Named(s)) if s == "default" => Margins::Default,
                Some(ParamValue::Named(s)) if s == "unit" => Margins::Unit,
                Some(ParamValue::Many(v)) => Margins::Explicit(v.clone()),
                Some(other) => {
                    return Err(CliError::Config(format!("gca: bad margins {other:?}")));
                }
            });
        }
        let mut points = vec![BTreeMap::new()];
        let mut sorted: Vec<&str> = names.to_vec();
        sorted.sort_unstable();
        for name in sorted {
            let grid = match self.params.get(name) {
                None => default_grid(family, name).expect("every parameter has a default"),
                Some(ParamValue::Named(s)) if s == "default" => {
                    default_grid(family, name).expect("every parameter has a default")
                }
                Some(ParamValue::One(v)) => vec![*v],
                Some(ParamValue::Many(v)) => v.clone(),
                Some(ParamValue::Named(s)) => {
                    return Err(CliError::Config(format!("{family}: `{name} = \"{s}\"`")));
                }
            };
            if grid.is_empty() {
                return Err(CliError::Config(format!(
                    "{family}: empty grid for `{name}`"
                )));
            }
            points = points
                .into_iter()
                .flat_map(|p| {
                    grid.iter().map(move |v| {
                        let mut p = p.clone();
                        p.insert(name.to_string(), *v);
                        p
                    })
                })
                .collect();
        }
        let points: Vec<LossPoint> = points
            .into_iter()
            .map(|params| LossPoint {
                family,
                params,
                margins: margins.clone(),
            })
            .collect();
        for p in &points {
            // margins depend on the data; check the rest against a dummy
            let stats = ClassStats::from_priors(&[0.5, 0.5]).expect("valid priors");
            let spec = match (&p.margins, p.family) {
                (Some(Margins::Explicit(_)), _) => continue,
                _ => p.to_spec(&stats),
            };
            spec.validate(2)
                .map_err(|e| CliError::Config(format!("{family} {}: {e}", p.label())))?;
        }
        Ok(points)
    }
}

impl LossPoint {
    pub fn label(&self) -> String {
        let mut parts: Vec<String> = self
            .params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        match &self.margins {
            Some(Margins::Default) | None => {}
            Some(Margins::Unit) => parts.push("margins=unit".into()),
            Some(Margins::Explicit(m)) => {
                let m: Vec<String> = m.iter().map(|v| v.to_string()).collect();
                parts.push(format!("margins={}", m.join("/")));
            }
        }
        parts.join(";")
    }

    fn get(&self, k: &str) -> f64 {
        self.params[k]
    }

    /// Concrete loss for training data with `stats`.
    pub fn to_spec(&self, stats: &ClassStats) -> LossSpec {
        match self.family {
            LossFamily::Ce => LossSpec::Ce,
            LossFamily::Wce => LossSpec::Wce,
            LossFamily::La => LossSpec::La {
                tau: self.get("tau"),
            },
            LossFamily::Equal => LossSpec::Equal {
                p: self.get("p"),
                lambda: self.get("lambda"),
            },
            LossFamily::Cb => LossSpec::Cb {
                gamma: self.get("gamma"),
            },
            LossFamily::Focal => LossSpec::Focal {
                gamma: self.get("gamma"),
            },
            LossFamily::Ldam => LossSpec::Ldam { c: self.get("c") },
            LossFamily::Gce => LossSpec::Gce { q: self.get("q") },
            LossFamily::Gla => LossSpec::Gla { q: self.get("q") },
            LossFamily::Gca => LossSpec::Gca {
                q: self.get("q"),
                margins: match &self.margins {
                    Some(Margins::Explicit(m)) => m.clone(),
                    Some(Margins::Unit) => vec![1.0; stats.n_classes()],
                    _ => default_gca_margins(stats),
                },
            },
            LossFamily::Csmax => LossSpec::Csmax {
                rho: self.get("rho"),
                psi_tau: self.get("psi_tau"),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

/// `[train]`: a preset plus optional overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "desk")]
    pub preset: Preset,
    #[serde(default = "linear")]
    pub model: ModelKind,
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub norm_bound: Option<f64>,
    #[serde(default = "yes")]
    pub fit_bias: bool,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr0: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub schedule: Option<Schedule>,
    #[serde(default)]
    pub seed: u64,
}

fn desk() -> Preset {
    Preset::Desk
}
fn linear() -> ModelKind {
    ModelKind::Linear
}
fn yes() -> bool {
    true
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            preset: Preset::Desk,
            model: ModelKind::Linear,
            hidden: Vec::new(),
            norm_bound: None,
            fit_bias: true,
            epochs: None,
            batch_size: None,
            lr0: None,
            momentum: None,
            weight_decay: None,
            schedule: None,
            seed: 0,
        }
    }
}

impl TrainSection {
    /// Resolved optimizer settings for one seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let base = match self.preset {
            Preset::Desk => TrainConfig::desk(seed),
            Preset::Paper => TrainConfig::paper(seed),
        };
        TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            lr0: self.lr0.unwrap_or(base.lr0),
            momentum: self.momentum.unwrap_or(base.momentum),
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
            schedule: self.schedule.unwrap_or(base.schedule),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_metrics")]
    pub metrics: Vec<String>,
}

fn default_metrics() -> Vec<String> {
    vec!["balanced_error".into(), "per_class_error".into()]
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            metrics: default_metrics(),
        }
    }
}

pub const KNOWN_METRICS: [&str; 3] = ["balanced_error", "per_class_error", "accuracy"];

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.dataset.validate()?;
        if self.repeats < 1 {
            return Err(CliError::Config("repeats must be >= 1".into()));
        }
        for entry in &self.losses {
            entry.expand()?;
        }
        self.train
            .train_config(0)
            .validate()
            .map_err(|e| CliError::Config(format!("[train] {e}")))?;
        if let Some(b) = self.train.norm_bound {
            if !(b > 0.0 && b.is_finite()) {
                return Err(CliError::Config(
                    "[train] norm_bound must be positive".into(),
                ));
            }
        }
        if self.train.model == ModelKind::Mlp && self.train.norm_bound.is_some() {
            return Err(CliError::Config(
                "[train] norm_bound applies to linear models".into(),
            ));
        }
        if self.train.hidden.contains(&0) {
            return Err(CliError::Config(
                "[train] hidden widths must be positive".into(),
            ));
        }
        if let Some(m) = self
            .eval
            .metrics
            .iter()
            .find(|m| !KNOWN_METRICS.contains(&m.as_str()))
        {
            return Err(CliError::Config(format!("[eval] unknown metric `{m}`")));
        }
        Ok(())
    }

    /// All grid points of all `[[loss]]` entries, grouped by entry.
    pub fn grid(&self) -> Result<Vec<Vec<LossPoint>>, CliError> {
        self.losses.iter().map(LossEntry::expand).collect()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.dataset.seed = seed;
        self.train.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
repeats = 2

[dataset]
profile = "longtail"
n = 3
d = 4
m_max = 50
imb_ratio = 10.0

[[loss]]
family = "gla"
q = [0.0, 0.5]

[[loss]]
family = "equal"
p = 0.5

[[loss]]
family = "gca"
q = "default"

[train]
epochs = 3
"#;

    #[test]
    fn parses_and_expands() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        let grid = cfg.grid().unwrap();
        assert_eq!(grid[0].len(), 2);
        assert_eq!(grid[1].len(), 8);
        assert_eq!(grid[2].len(), 10);
        assert_eq!(grid[1][0].label(), "lambda=0.000176;p=0.5");
        assert_eq!(cfg.train.train_config(4).epochs, 3);
        assert_eq!(cfg.train.train_config(4).lr0, 0.1);
    }

    #[test]
    fn rejects_bad_configs() {
        let empty = SAMPLE.replace("q = [0.0, 0.5]", "q = []");
        assert!(matches!(
            ExperimentConfig::parse(&empty),
            Err(CliError::Config(_))
        ));
        let unknown = SAMPLE.replace("family = \"gla\"", "family = \"gla\"\ntau = 1.0");
        assert!(ExperimentConfig::parse(&unknown).is_err());
        let bad_q = SAMPLE.replace("[0.0, 0.5]", "[1.5]");
        assert!(ExperimentConfig::parse(&bad_q).is_err());
        let bad_family = SAMPLE.replace("\"equal\"", "\"hinge\"");
        assert!(ExperimentConfig::parse(&bad_family).is_err());
        assert!(
            ExperimentConfig::parse("[dataset]\nprofile = \"figure1\"\nm_max = 10\nn = 3").is_err()
        );
    }

    #[test]
    fn default_grids_follow_the_usual_ranges() {
        assert_eq!(default_grid(LossFamily::Focal, "gamma").unwrap().len(), 29);
        assert_eq!(default_grid(LossFamily::Ldam, "c").unwrap().len(), 17);
        assert_eq!(default_grid(LossFamily::Cb, "gamma").unwrap().len(), 12);
        assert_eq!(default_grid(LossFamily::La, "tau").unwrap(), vec![1.0]);
    }
}
